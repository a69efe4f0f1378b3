use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_objective_grad, Classifier, InputGradient, LogitObjective, Trainable};
use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};
use crate::losses::cross_entropy;

pub const ARCH_TAG: &str = "tiny_cnn";

/// Layer widths of a [`TinyCnn`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TinyCnnShape {
    /// Input height and width; must be divisible by 4.
    pub side: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub classes: usize,
}

impl Default for TinyCnnShape {
    fn default() -> Self {
        Self {
            side: 32,
            conv1: 16,
            conv2: 32,
            classes: 10,
        }
    }
}

impl TinyCnnShape {
    fn validate(&self) -> Result<()> {
        if self.side == 0 || !self.side.is_multiple_of(4) {
            return Err(Error::InvalidParam(format!(
                "input side must be a positive multiple of 4, got {}",
                self.side
            )));
        }
        if self.conv1 == 0 || self.conv2 == 0 || self.classes < 2 {
            return Err(Error::InvalidParam(format!("degenerate layer widths {self:?}")));
        }
        Ok(())
    }

    fn flat_features(&self) -> usize {
        self.conv2 * (self.side / 4) * (self.side / 4)
    }

    fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        Layout {
            w1: take(self.conv1 * CHANNELS * 9),
            b1: take(self.conv1),
            w2: take(self.conv2 * self.conv1 * 9),
            b2: take(self.conv2),
            wf: take(self.classes * self.flat_features()),
            bf: take(self.classes),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().bf.end
    }
}

#[derive(Debug, Clone)]
struct Layout {
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    wf: Range<usize>,
    bf: Range<usize>,
}

/// conv3x3(3 -> conv1) + ReLU + maxpool2, conv3x3(conv1 -> conv2) + ReLU +
/// maxpool2, then one dense layer to the logits. Convolutions use stride 1
/// and zero padding 1. Inputs are shifted by -0.5 before the first layer.
/// All arithmetic is `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyCnn {
    shape: TinyCnnShape,
    params: Vec<f32>,
}

/// Activations kept from the forward pass for the backward pass.
struct Cache {
    input: Vec<f32>,
    act1: Vec<f32>,
    pool1: Vec<f32>,
    arg1: Vec<u32>,
    act2: Vec<f32>,
    pool2: Vec<f32>,
    arg2: Vec<u32>,
    logits: Vec<f32>,
}

impl TinyCnn {
    /// He-uniform convolution weights, `1/sqrt(fan_in)`-uniform dense
    /// weights, zero biases.
    pub fn new(shape: TinyCnnShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let layout = shape.layout();
        let mut params = vec![0.0f32; shape.param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |range: Range<usize>, bound: f32| {
            for p in &mut params[range] {
                *p = rng.random_range(-bound..bound);
            }
        };
        fill(layout.w1, (6.0 / (CHANNELS * 9) as f32).sqrt());
        fill(layout.w2, (6.0 / (shape.conv1 * 9) as f32).sqrt());
        fill(layout.wf, 1.0 / (shape.flat_features() as f32).sqrt());
        Ok(Self { shape, params })
    }

    pub fn zeros(shape: TinyCnnShape) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            shape,
            params: vec![0.0; shape.param_count()],
        })
    }

    pub fn from_params(shape: TinyCnnShape, params: Vec<f32>) -> Result<Self> {
        shape.validate()?;
        if params.len() != shape.param_count() {
            return Err(Error::shape(shape.param_count(), params.len()));
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> TinyCnnShape {
        self.shape
    }

    fn forward(&self, image: &Image) -> Result<Cache> {
        self.check_input(image)?;
        let s = self.shape;
        let l = s.layout();
        let p = &self.params;
        let input: Vec<f32> = image.data().iter().map(|&v| v as f32 - 0.5).collect();

        let (h1, h2, h3) = (s.side, s.side / 2, s.side / 4);
        let mut act1 = vec![0.0; s.conv1 * h1 * h1];
        conv3x3_forward(&input, CHANNELS, h1, &p[l.w1], &p[l.b1], s.conv1, &mut act1);
        relu(&mut act1);
        let (pool1, arg1) = maxpool2(&act1, s.conv1, h1);

        let mut act2 = vec![0.0; s.conv2 * h2 * h2];
        conv3x3_forward(&pool1, s.conv1, h2, &p[l.w2], &p[l.b2], s.conv2, &mut act2);
        relu(&mut act2);
        let (pool2, arg2) = maxpool2(&act2, s.conv2, h2);
        debug_assert_eq!(pool2.len(), s.conv2 * h3 * h3);

        let n = s.flat_features();
        let wf = &p[l.wf];
        let logits = p[l.bf]
            .iter()
            .enumerate()
            .map(|(k, &b)| b + dot(&wf[k * n..(k + 1) * n], &pool2))
            .collect();
        Ok(Cache {
            input,
            act1,
            pool1,
            arg1,
            act2,
            pool2,
            arg2,
            logits,
        })
    }

    /// Backpropagates `dlogits`. Parameter gradients are added into
    /// `param_grad` when given; the input gradient is returned when asked for.
    fn backward(
        &self,
        cache: &Cache,
        dlogits: &[f32],
        mut param_grad: Option<&mut [f32]>,
        want_input: bool,
    ) -> Option<Vec<f32>> {
        let s = self.shape;
        let l = s.layout();
        let p = &self.params;
        let n = s.flat_features();
        let (h1, h2) = (s.side, s.side / 2);

        let wf = &p[l.wf.clone()];
        let mut dpool2 = vec![0.0f32; n];
        for (k, &d) in dlogits.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            axpy(d, &wf[k * n..(k + 1) * n], &mut dpool2);
        }
        if let Some(g) = param_grad.as_deref_mut() {
            let gwf = &mut g[l.wf.clone()];
            for (k, &d) in dlogits.iter().enumerate() {
                axpy(d, &cache.pool2, &mut gwf[k * n..(k + 1) * n]);
            }
            for (gb, &d) in g[l.bf.clone()].iter_mut().zip(dlogits) {
                *gb += d;
            }
        }

        let mut dact2 = unpool(&dpool2, &cache.arg2, cache.act2.len());
        relu_backward(&cache.act2, &mut dact2);
        if let Some(g) = param_grad.as_deref_mut() {
            conv3x3_param_grad(&cache.pool1, s.conv1, h2, &dact2, s.conv2, g, &l.w2, &l.b2);
        }
        let mut dpool1 = vec![0.0f32; cache.pool1.len()];
        conv3x3_input_grad(&dact2, s.conv2, h2, &p[l.w2.clone()], s.conv1, &mut dpool1);

        let mut dact1 = unpool(&dpool1, &cache.arg1, cache.act1.len());
        relu_backward(&cache.act1, &mut dact1);
        if let Some(g) = param_grad {
            conv3x3_param_grad(&cache.input, CHANNELS, h1, &dact1, s.conv1, g, &l.w1, &l.b1);
        }
        want_input.then(|| {
            let mut dinput = vec![0.0f32; cache.input.len()];
            conv3x3_input_grad(&dact1, s.conv1, h1, &p[l.w1.clone()], CHANNELS, &mut dinput);
            dinput
        })
    }
}

impl Classifier for TinyCnn {
    fn class_count(&self) -> usize {
        self.shape.classes
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        let side = self.shape.side;
        if image.dims() != (side, side) {
            return Err(Error::shape(
                format!("{side}x{side} image"),
                format!("{}x{}", image.height(), image.width()),
            ));
        }
        Ok(())
    }

    fn logits(&self, image: &Image) -> Result<Vec<f64>> {
        Ok(self.forward(image)?.logits.iter().map(|&v| f64::from(v)).collect())
    }

    fn input_gradient_with(
        &self,
        image: &Image,
        objective: &LogitObjective<'_>,
    ) -> Result<InputGradient> {
        let cache = self.forward(image)?;
        let logits: Vec<f64> = cache.logits.iter().map(|&v| f64::from(v)).collect();
        let (loss, dlogits) = objective(&logits)?;
        check_objective_grad(&dlogits, self.shape.classes)?;
        let dlogits: Vec<f32> = dlogits.iter().map(|&v| v as f32).collect();
        let grad = self
            .backward(&cache, &dlogits, None, true)
            .expect("input gradient requested")
            .into_iter()
            .map(f64::from)
            .collect();
        Ok(InputGradient { logits, loss, grad })
    }
}

impl Trainable for TinyCnn {
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
        let s = self.shape;
        vec![
            ("conv1.weight".into(), vec![s.conv1, CHANNELS, 3, 3]),
            ("conv1.bias".into(), vec![s.conv1]),
            ("conv2.weight".into(), vec![s.conv2, s.conv1, 3, 3]),
            ("conv2.bias".into(), vec![s.conv2]),
            ("fc.weight".into(), vec![s.classes, s.flat_features()]),
            ("fc.bias".into(), vec![s.classes]),
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
        let cache = self.forward(image)?;
        let logits: Vec<f64> = cache.logits.iter().map(|&v| f64::from(v)).collect();
        let (loss, dlogits) = cross_entropy(&logits, label)?;
        let dlogits: Vec<f32> = dlogits.iter().map(|&v| v as f32).collect();
        self.backward(&cache, &dlogits, Some(grad), false);
        Ok(loss)
    }
}

#[inline]
/// Eight running sums so the loop vectorizes; the summation order is fixed.
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            lanes[k] += x[k] * y[k];
        }
    }
    let tail: f32 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    lanes.iter().sum::<f32>() + tail
}

#[inline]
fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn relu(x: &mut [f32]) {
    for v in x {
        *v = v.max(0.0);
    }
}

fn relu_backward(activation: &[f32], grad: &mut [f32]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

// The convolutions work on planes padded by one zero pixel on each side,
// with side + 2 columns per row. For a fixed (input channel, tap) the output
// rows then read one contiguous run of the padded plane, so each tap is a
// single long axpy or dot. Columns past `side` in the wide rows are scratch.

fn pad_planes(input: &[f32], channels: usize, side: usize) -> Vec<f32> {
    let ps = side + 2;
    let mut out = vec![0.0f32; channels * ps * ps];
    for c in 0..channels {
        for y in 0..side {
            let src = &input[(c * side + y) * side..][..side];
            out[c * ps * ps + (y + 1) * ps + 1..][..side].copy_from_slice(src);
        }
    }
    out
}

/// Length of the run covering every valid output position of a wide plane.
fn run_len(side: usize) -> usize {
    (side - 1) * (side + 2) + side
}

/// Scatters `dout` (`channels` planes of `side x side`) into wide rows.
fn widen(dout: &[f32], channels: usize, side: usize) -> Vec<f32> {
    let ps = side + 2;
    let mut wide = vec![0.0f32; channels * side * ps];
    for c in 0..channels {
        for y in 0..side {
            wide[(c * side + y) * ps..][..side].copy_from_slice(&dout[(c * side + y) * side..][..side]);
        }
    }
    wide
}

fn conv3x3_forward(
    input: &[f32],
    cin: usize,
    side: usize,
    weight: &[f32],
    bias: &[f32],
    cout: usize,
    out: &mut [f32],
) {
    let ps = side + 2;
    let padded = pad_planes(input, cin, side);
    let run = run_len(side);
    let mut wide = vec![0.0f32; side * ps];
    for o in 0..cout {
        wide.fill(bias[o]);
        for i in 0..cin {
            let in_p = &padded[i * ps * ps..(i + 1) * ps * ps];
            for ky in 0..3 {
                for kx in 0..3 {
                    let w = weight[((o * cin + i) * 3 + ky) * 3 + kx];
                    axpy(w, &in_p[ky * ps + kx..][..run], &mut wide[..run]);
                }
            }
        }
        for y in 0..side {
            out[(o * side + y) * side..][..side].copy_from_slice(&wide[y * ps..][..side]);
        }
    }
}

/// Gradient with respect to the convolution input.
fn conv3x3_input_grad(
    dout: &[f32],
    cout: usize,
    side: usize,
    weight: &[f32],
    cin: usize,
    dinput: &mut [f32],
) {
    let ps = side + 2;
    let wide = widen(dout, cout, side);
    let run = run_len(side);
    let mut dpad = vec![0.0f32; cin * ps * ps];
    for i in 0..cin {
        let dp = &mut dpad[i * ps * ps..(i + 1) * ps * ps];
        for o in 0..cout {
            let d_w = &wide[o * side * ps..][..run];
            for ky in 0..3 {
                for kx in 0..3 {
                    let w = weight[((o * cin + i) * 3 + ky) * 3 + kx];
                    axpy(w, d_w, &mut dp[ky * ps + kx..][..run]);
                }
            }
        }
    }
    for i in 0..cin {
        for y in 0..side {
            let src = &dpad[i * ps * ps + (y + 1) * ps + 1..][..side];
            for (d, s) in dinput[(i * side + y) * side..][..side].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

/// Adds weight and bias gradients into `grad` at the given ranges.
#[allow(clippy::too_many_arguments)]
fn conv3x3_param_grad(
    input: &[f32],
    cin: usize,
    side: usize,
    dout: &[f32],
    cout: usize,
    grad: &mut [f32],
    w_range: &Range<usize>,
    b_range: &Range<usize>,
) {
    let ps = side + 2;
    let padded = pad_planes(input, cin, side);
    let wide = widen(dout, cout, side);
    let run = run_len(side);
    let (gw, rest) = grad[w_range.start..].split_at_mut(w_range.len());
    let gb = &mut rest[b_range.start - w_range.end..b_range.end - w_range.end];
    for o in 0..cout {
        let d_w = &wide[o * side * ps..][..run];
        gb[o] += d_w.iter().sum::<f32>();
        for i in 0..cin {
            let in_p = &padded[i * ps * ps..(i + 1) * ps * ps];
            for ky in 0..3 {
                for kx in 0..3 {
                    gw[((o * cin + i) * 3 + ky) * 3 + kx] += dot(d_w, &in_p[ky * ps + kx..][..run]);
                }
            }
        }
    }
}

/// 2x2 max pooling with stride 2. Returns the pooled planes and, per output,
/// the flat index of the winning input (first maximum in scan order).
fn maxpool2(input: &[f32], channels: usize, side: usize) -> (Vec<f32>, Vec<u32>) {
    let half = side / 2;
    let mut out = Vec::with_capacity(channels * half * half);
    let mut arg = Vec::with_capacity(channels * half * half);
    for c in 0..channels {
        let base = c * side * side;
        for y in 0..half {
            for x in 0..half {
                let mut best = base + 2 * y * side + 2 * x;
                for idx in [
                    base + 2 * y * side + 2 * x + 1,
                    base + (2 * y + 1) * side + 2 * x,
                    base + (2 * y + 1) * side + 2 * x + 1,
                ] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

fn unpool(dpooled: &[f32], arg: &[u32], len: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; len];
    for (&d, &i) in dpooled.iter().zip(arg) {
        out[i as usize] += d;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LogitLoss;
    use crate::model::input_gradient;

    fn small_shape() -> TinyCnnShape {
        TinyCnnShape {
            side: 8,
            conv1: 4,
            conv2: 6,
            classes: 5,
        }
    }

    fn pattern(side: usize, phase: f64) -> Image {
        Image::from_fn(side, side, |c, y, x| {
            0.5 + 0.45 * ((c as f64 + 1.0) * 0.7 * y as f64 + 0.37 * x as f64 + phase).sin()
        })
        .unwrap()
    }

    #[test]
    fn default_shape_and_param_count() {
        let s = TinyCnnShape::default();
        let expected = 16 * 27 + 16 + 32 * 16 * 9 + 32 + 10 * 32 * 8 * 8 + 10;
        assert_eq!(s.param_count(), expected);
        let net = TinyCnn::new(s, 1).unwrap();
        let total: usize = net.tensors().iter().map(|(_, d)| d.iter().product::<usize>()).sum();
        assert_eq!(total, expected);
    }

    #[test]
    fn rejects_wrong_input_size_and_bad_shape() {
        let net = TinyCnn::new(small_shape(), 0).unwrap();
        assert!(net.logits(&pattern(12, 0.0)).is_err());
        assert!(TinyCnn::new(TinyCnnShape { side: 10, ..small_shape() }, 0).is_err());
    }

    #[test]
    fn forward_is_deterministic_and_argmax_valid() {
        let a = TinyCnn::new(TinyCnnShape::default(), 9).unwrap();
        let b = TinyCnn::new(TinyCnnShape::default(), 9).unwrap();
        let img = pattern(32, 0.3);
        let la = a.logits(&img).unwrap();
        assert_eq!(la, b.logits(&img).unwrap());
        assert_eq!(la, a.logits(&img).unwrap());
        assert!(a.predict(&img).unwrap() < 10);
    }

    #[test]
    fn zero_network_has_zero_gradient() {
        let net = TinyCnn::zeros(small_shape()).unwrap();
        let g = input_gradient(&net, &pattern(8, 0.1), LogitLoss::CrossEntropy, 2).unwrap();
        assert!(g.grad.iter().all(|&v| v == 0.0));
        assert!(g.logits.iter().all(|&v| v == 0.0));
    }

    /// Plain-loop convolution used to check the row-sliced implementation.
    fn naive_conv(input: &[f32], cin: usize, side: usize, w: &[f32], b: &[f32], cout: usize) -> Vec<f32> {
        let mut out = vec![0.0; cout * side * side];
        for o in 0..cout {
            for y in 0..side as isize {
                for x in 0..side as isize {
                    let mut acc = b[o];
                    for i in 0..cin {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (yy, xx) = (y + ky - 1, x + kx - 1);
                                if yy < 0 || xx < 0 || yy >= side as isize || xx >= side as isize {
                                    continue;
                                }
                                acc += w[((o * cin + i) * 3 + ky as usize) * 3 + kx as usize]
                                    * input[i * side * side + yy as usize * side + xx as usize];
                            }
                        }
                    }
                    out[o * side * side + y as usize * side + x as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn sliced_convolution_matches_naive_loops() {
        let (cin, cout, side) = (3, 4, 6);
        let input: Vec<f32> = (0..cin * side * side).map(|i| ((i * 7 % 11) as f32 - 5.0) / 7.0).collect();
        let w: Vec<f32> = (0..cout * cin * 9).map(|i| ((i * 5 % 13) as f32 - 6.0) / 9.0).collect();
        let b = [0.1, -0.2, 0.3, 0.0];
        let mut out = vec![0.0; cout * side * side];
        conv3x3_forward(&input, cin, side, &w, &b, cout, &mut out);
        let want = naive_conv(&input, cin, side, &w, &b, cout);
        for (a, e) in out.iter().zip(&want) {
            assert!((a - e).abs() < 1e-5);
        }
    }
}
