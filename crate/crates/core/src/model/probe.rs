use super::{check_objective_grad, Classifier, InputGradient, LogitObjective, Trainable};
use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};
use crate::losses::cross_entropy;

pub const ARCH_TAG: &str = "linear_color_probe";

/// `logits = W * mean_rgb(x) + b` with `W` of shape `C x 3`.
///
/// Small enough that its forward pass and input gradient have closed forms,
/// which makes it the reference model for gradient plumbing. Accepts images
/// of any size. Parameters are stored as `f32` (weights row-major, then
/// biases) but evaluated in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearColorProbe {
    classes: usize,
    params: Vec<f32>,
}

impl LinearColorProbe {
    pub fn new(weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        let classes = bias.len();
        if classes < 2 {
            return Err(Error::InvalidParam(format!(
                "probe needs at least 2 classes, got {classes}"
            )));
        }
        if weights.len() != classes * CHANNELS {
            return Err(Error::shape(classes * CHANNELS, weights.len()));
        }
        let mut params = weights;
        params.extend(bias);
        Ok(Self { classes, params })
    }

    pub fn zeros(classes: usize) -> Result<Self> {
        Self::new(vec![0.0; classes * CHANNELS], vec![0.0; classes])
    }

    pub fn weight(&self, class: usize, channel: usize) -> f64 {
        f64::from(self.params[class * CHANNELS + channel])
    }

    pub fn bias(&self, class: usize) -> f64 {
        f64::from(self.params[self.classes * CHANNELS + class])
    }

    fn forward(&self, image: &Image) -> Vec<f64> {
        let mean = image.mean_rgb();
        (0..self.classes)
            .map(|k| {
                self.bias(k)
                    + (0..CHANNELS)
                        .map(|c| self.weight(k, c) * mean[c])
                        .sum::<f64>()
            })
            .collect()
    }
}

impl Classifier for LinearColorProbe {
    fn class_count(&self) -> usize {
        self.classes
    }

    fn check_input(&self, _image: &Image) -> Result<()> {
        Ok(())
    }

    fn logits(&self, image: &Image) -> Result<Vec<f64>> {
        Ok(self.forward(image))
    }

    fn input_gradient_with(
        &self,
        image: &Image,
        objective: &LogitObjective<'_>,
    ) -> Result<InputGradient> {
        let logits = self.forward(image);
        let (loss, dlogits) = objective(&logits)?;
        check_objective_grad(&dlogits, self.classes)?;
        let n = image.plane_len();
        let mut grad = Vec::with_capacity(CHANNELS * n);
        for c in 0..CHANNELS {
            let per_pixel = (0..self.classes)
                .map(|k| dlogits[k] * self.weight(k, c))
                .sum::<f64>()
                / n as f64;
            grad.extend(std::iter::repeat_n(per_pixel, n));
        }
        Ok(InputGradient { logits, loss, grad })
    }
}

impl Trainable for LinearColorProbe {
    fn arch_tag(&self) -> &'static str {
        ARCH_TAG
    }

    fn params(&self) -> &[f32] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    fn tensors(&self) -> Vec<(String, Vec<usize>)> {
        vec![
            ("weight".into(), vec![self.classes, CHANNELS]),
            ("bias".into(), vec![self.classes]),
        ]
    }

    fn accumulate_param_gradient(
        &self,
        image: &Image,
        label: usize,
        grad: &mut [f32],
    ) -> Result<f64> {
        if grad.len() != self.params.len() {
            return Err(Error::shape(self.params.len(), grad.len()));
        }
        let mean = image.mean_rgb();
        let (loss, dlogits) = cross_entropy(&self.forward(image), label)?;
        for (k, &d) in dlogits.iter().enumerate() {
            for c in 0..CHANNELS {
                grad[k * CHANNELS + c] += (d * mean[c]) as f32;
            }
            grad[self.classes * CHANNELS + k] += d as f32;
        }
        Ok(loss)
    }
}
