//! Differentiable classifiers: forward logits, exact input gradients via
//! reverse-mode accumulation, and the flat parameter view the trainer uses.

mod checkpoint;
mod probe;
mod tiny_cnn;
mod train;

pub use checkpoint::{load_checkpoint, model_id, save_checkpoint, Checkpoint, TrainingMeta};
pub use probe::LinearColorProbe;
pub use tiny_cnn::{TinyCnn, TinyCnnShape};
pub use train::{
    evaluate_accuracy, train, train_with, BatchTransform, EpochMetrics, EpochProbe, SgdConfig, TrainRun,
};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{argmax, LogitLoss};

/// Result of one forward/backward pass.
#[derive(Debug, Clone)]
pub struct InputGradient {
    pub logits: Vec<f64>,
    pub loss: f64,
    /// dL/dx in the image's channel-major layout.
    pub grad: Vec<f64>,
}

/// Maps logits to a loss value and its gradient with respect to the logits.
pub type LogitObjective<'a> = dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)> + 'a;

pub trait Classifier: Send + Sync {
    fn class_count(&self) -> usize;

    /// Fails with a shape error when this model cannot consume `image`.
    fn check_input(&self, image: &Image) -> Result<()>;

    fn logits(&self, image: &Image) -> Result<Vec<f64>>;

    /// One forward pass, then the exact gradient of `objective(logits)` with
    /// respect to the input pixels.
    fn input_gradient_with(
        &self,
        image: &Image,
        objective: &LogitObjective<'_>,
    ) -> Result<InputGradient>;

    fn predict(&self, image: &Image) -> Result<usize> {
        Ok(argmax(&self.logits(image)?))
    }
}

/// Input gradient of a standard logit loss at `label`.
pub fn input_gradient<M: Classifier + ?Sized>(
    model: &M,
    image: &Image,
    loss: LogitLoss,
    label: usize,
) -> Result<InputGradient> {
    model.input_gradient_with(image, &|logits| loss.evaluate(logits, label))
}

/// A classifier whose parameters live in one flat `f32` buffer.
pub trait Trainable: Classifier {
    fn arch_tag(&self) -> &'static str;

    fn params(&self) -> &[f32];

    fn params_mut(&mut self) -> &mut [f32];

    /// Named tensors in buffer order, with their shapes.
    fn tensors(&self) -> Vec<(String, Vec<usize>)>;

    /// Adds d(cross-entropy)/d(params) for one example into `grad` and
    /// returns the example's loss.
    fn accumulate_param_gradient(&self, image: &Image, label: usize, grad: &mut [f32])
        -> Result<f64>;
}

/// Every architecture the checkpoint format knows.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    TinyCnn(TinyCnn),
    LinearProbe(LinearColorProbe),
}

impl Model {
    pub fn as_trainable(&self) -> &dyn Trainable {
        match self {
            Model::TinyCnn(m) => m,
            Model::LinearProbe(m) => m,
        }
    }

    pub fn as_trainable_mut(&mut self) -> &mut dyn Trainable {
        match self {
            Model::TinyCnn(m) => m,
            Model::LinearProbe(m) => m,
        }
    }
}

impl From<TinyCnn> for Model {
    fn from(m: TinyCnn) -> Self {
        Model::TinyCnn(m)
    }
}

impl From<LinearColorProbe> for Model {
    fn from(m: LinearColorProbe) -> Self {
        Model::LinearProbe(m)
    }
}

impl Classifier for Model {
    fn class_count(&self) -> usize {
        self.as_trainable().class_count()
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        self.as_trainable().check_input(image)
    }

    fn logits(&self, image: &Image) -> Result<Vec<f64>> {
        self.as_trainable().logits(image)
    }

    fn input_gradient_with(
        &self,
        image: &Image,
        objective: &LogitObjective<'_>,
    ) -> Result<InputGradient> {
        self.as_trainable().input_gradient_with(image, objective)
    }
}

impl Trainable for Model {
    fn arch_tag(&self) -> &'static str {
        self.as_trainable().arch_tag()
    }

    fn params(&self) -> &[f32] {
        self.as_trainable().params()
    }

    fn params_mut(&mut self) -> &mut [f32] {
        self.as_trainable_mut().params_mut()
    }

    fn tensors(&self) -> Vec<(String, Vec<usize>)> {
        self.as_trainable().tensors()
    }

    fn accumulate_param_gradient(
        &self,
        image: &Image,
        label: usize,
        grad: &mut [f32],
    ) -> Result<f64> {
        self.as_trainable()
            .accumulate_param_gradient(image, label, grad)
    }
}

fn check_objective_grad(grad: &[f64], classes: usize) -> Result<()> {
    if grad.len() != classes {
        return Err(Error::shape(
            format!("{classes} logit gradients"),
            grad.len(),
        ));
    }
    Ok(())
}
