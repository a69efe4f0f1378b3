//! Attack objectives and their gradients with respect to logits (or scores).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Weight of the style term in the style-guided loss.
pub const DEFAULT_STYLE_LAMBDA: f64 = 1e-4;

/// Score level below which the threshold loss stops pushing.
pub const DEFAULT_SCORE_THRESHOLD: f64 = 5.0;

/// Objective selection as it appears in experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    /// Margin loss `max(Z_l - max_{i != l} Z_i, -kappa)`.
    Cw { kappa: f64 },
    CrossEntropy,
    /// Margin loss plus `lambda * ||x' - x_style||^2`, the target coming from
    /// a named style preset.
    StyleCw {
        kappa: f64,
        lambda: f64,
        preset: String,
    },
    /// `max(score, threshold)` for scalar-output models.
    Threshold { threshold: f64 },
    /// Mean per-pixel cross-entropy for dense (per-pixel) classifiers.
    PixelwiseCe,
}

impl LossSpec {
    pub const NAMES: [&'static str; 5] =
        ["cw", "cross_entropy", "style_cw", "threshold", "pixelwise_ce"];

    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Cw { .. } => "cw",
            LossSpec::CrossEntropy => "cross_entropy",
            LossSpec::StyleCw { .. } => "style_cw",
            LossSpec::Threshold { .. } => "threshold",
            LossSpec::PixelwiseCe => "pixelwise_ce",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidParam(format!(
                "{what} must be finite and non-negative, got {v}"
            )))
        };
        match self {
            LossSpec::Cw { kappa } if !(*kappa >= 0.0 && kappa.is_finite()) => bad("kappa", *kappa),
            LossSpec::StyleCw { kappa, .. } if !(*kappa >= 0.0 && kappa.is_finite()) => {
                bad("kappa", *kappa)
            }
            LossSpec::StyleCw { lambda, .. } if !(*lambda >= 0.0 && lambda.is_finite()) => {
                bad("lambda", *lambda)
            }
            _ => Ok(()),
        }
    }

    /// The logit-space part of the objective, if this loss applies to a
    /// classifier's logits.
    pub fn logit_loss(&self) -> Option<LogitLoss> {
        match self {
            LossSpec::Cw { kappa } | LossSpec::StyleCw { kappa, .. } => {
                Some(LogitLoss::Cw { kappa: *kappa })
            }
            LossSpec::CrossEntropy => Some(LogitLoss::CrossEntropy),
            _ => None,
        }
    }
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::Cw { kappa: 0.0 }
    }
}

/// A differentiable function of a classifier's logits and the true label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogitLoss {
    Cw { kappa: f64 },
    CrossEntropy,
}

impl LogitLoss {
    pub fn evaluate(&self, logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
        match *self {
            LogitLoss::Cw { kappa } => cw_loss(logits, label, kappa),
            LogitLoss::CrossEntropy => cross_entropy(logits, label),
        }
    }
}

fn check_label(logits: &[f64], label: usize) -> Result<()> {
    if label >= logits.len() {
        return Err(Error::InvalidParam(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(())
}

/// Index of the largest logit other than `label`; ties go to the lowest index.
pub fn runner_up(logits: &[f64], label: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &z) in logits.iter().enumerate() {
        if i == label {
            continue;
        }
        if best.is_none_or(|b| z > logits[b]) {
            best = Some(i);
        }
    }
    best
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Untargeted margin loss. The subgradient is `+1` at the label and `-1` at
/// the runner-up while the margin is still above `-kappa`, zero afterwards.
pub fn cw_loss(logits: &[f64], label: usize, kappa: f64) -> Result<(f64, Vec<f64>)> {
    if logits.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "margin loss needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    check_label(logits, label)?;
    let other = runner_up(logits, label).expect("at least two classes");
    let margin = logits[label] - logits[other];
    let mut grad = vec![0.0; logits.len()];
    if margin > -kappa {
        grad[label] = 1.0;
        grad[other] = -1.0;
        Ok((margin, grad))
    } else {
        Ok((-kappa, grad))
    }
}

/// `-log softmax(logits)[label]`, evaluated in log-sum-exp form.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    check_label(logits, label)?;
    let top = argmax(logits);
    let m = logits[top];
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    // everything except the dominant term, so ln(1 + rest) keeps precision
    let rest: f64 = exps
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, e)| e)
        .sum();
    let log_norm = rest.ln_1p();
    let loss = log_norm + (m - logits[label]);
    let total = 1.0 + rest;
    let mut grad: Vec<f64> = exps.iter().map(|e| e / total).collect();
    // p_label - 1 cancels badly when the label dominates; -rest/total does not
    grad[label] = if label == top {
        -rest / total
    } else {
        grad[label] - 1.0
    };
    Ok((loss, grad))
}

/// Value and gradients of the style-guided margin objective.
#[derive(Debug, Clone)]
pub struct StyleLoss {
    pub value: f64,
    pub logit_grad: Vec<f64>,
    /// `2 * lambda * (x' - x_style)`, to be added to the model's input gradient.
    pub pixel_grad: Vec<f64>,
}

pub fn style_cw_loss(
    current: &Image,
    logits: &[f64],
    label: usize,
    kappa: f64,
    lambda: f64,
    style_target: &Image,
) -> Result<StyleLoss> {
    if !current.same_shape(style_target) {
        return Err(Error::shape(
            format!("{:?}", current.dims()),
            format!("{:?}", style_target.dims()),
        ));
    }
    let (margin, logit_grad) = cw_loss(logits, label, kappa)?;
    let (distance, pixel_grad) = style_term(current, style_target, lambda);
    Ok(StyleLoss {
        value: margin + distance,
        logit_grad,
        pixel_grad,
    })
}

/// `lambda * ||current - target||^2` and its gradient in `current`.
pub(crate) fn style_term(current: &Image, target: &Image, lambda: f64) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let grad = current
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| {
            let d = a - b;
            value += d * d;
            2.0 * lambda * d
        })
        .collect();
    (lambda * value, grad)
}

/// `max(score, threshold)`; the gradient is 1 while the score is above the
/// threshold. An attack driven by this loss stops once `score < threshold`.
pub fn threshold_loss(score: f64, threshold: f64) -> (f64, f64) {
    if score > threshold {
        (score, 1.0)
    } else {
        (threshold, 0.0)
    }
}

pub fn threshold_reached(score: f64, threshold: f64) -> bool {
    score < threshold
}

/// Mean over pixels of per-pixel cross-entropy.
///
/// `logits` is pixel-major: the `classes` logits of pixel 0, then pixel 1, and
/// so on. The returned gradient has the same layout.
pub fn pixelwise_ce(logits: &[f64], classes: usize, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    if classes == 0 || logits.len() != classes * labels.len() || labels.is_empty() {
        return Err(Error::shape(
            format!("{} logits ({} pixels x {classes})", classes * labels.len(), labels.len()),
            logits.len(),
        ));
    }
    let n = labels.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (pixel, &label) in logits.chunks_exact(classes).zip(labels) {
        let (l, g) = cross_entropy(pixel, label)?;
        total += l;
        grad.extend(g.into_iter().map(|v| v / n));
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cw_examples() {
        let (l, g) = cw_loss(&[3.0, 1.0, 0.0], 0, 0.0).unwrap();
        assert_eq!(l, 2.0);
        assert_eq!(g, vec![1.0, -1.0, 0.0]);

        let (l, g) = cw_loss(&[0.0, 5.0, 0.0], 0, 0.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cw_runner_up_ties_pick_lowest_index() {
        let (_, g) = cw_loss(&[5.0, 4.0, 4.0, 4.0], 0, 0.0).unwrap();
        assert_eq!(g, vec![1.0, -1.0, 0.0, 0.0]);
        let (_, g) = cw_loss(&[2.0, 2.0, 3.0], 2, 5.0).unwrap();
        assert_eq!(g, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn cw_rejects_single_class_and_bad_label() {
        assert!(cw_loss(&[1.0], 0, 0.0).is_err());
        assert!(cw_loss(&[1.0, 2.0], 2, 0.0).is_err());
    }

    #[test]
    fn cw_confidence_margin() {
        // misclassified by 1 but kappa asks for 3: still active
        let (l, g) = cw_loss(&[0.0, 1.0], 0, 3.0).unwrap();
        assert_eq!(l, -1.0);
        assert_eq!(g, vec![1.0, -1.0]);
        let (l, _) = cw_loss(&[0.0, 4.0], 0, 3.0).unwrap();
        assert_eq!(l, -3.0);
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let (l, g) = cross_entropy(&[0.7; 10], 4).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-15);
        assert!(g.iter().sum::<f64>().abs() < 1e-15);

        // ln(1 + e^-20) and the matching softmax mass
        let tail = (-20f64).exp();
        let (l, g) = cross_entropy(&[10.0, -10.0], 0).unwrap();
        // series ln(1 + u) = u - u^2/2 + ..., u = e^-20 ~ 2.06e-9
        assert!((l - (tail - tail * tail / 2.0)).abs() < 1e-24);
        assert!((l - 2.061_153_620_314_381e-9).abs() < 1e-21);
        assert!((g[0] + tail / (1.0 + tail)).abs() < 1e-22);
        assert!((g[1] - tail / (1.0 + tail)).abs() < 1e-22);
    }

    #[test]
    fn cross_entropy_survives_huge_logits() {
        let (l, g) = cross_entropy(&[1e4, 0.0, -1e4], 1).unwrap();
        assert!((l - 1e4).abs() < 1e-9);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn style_loss_reduces_to_cw() {
        let img = Image::filled(2, 2, 0.3).unwrap();
        let target = Image::filled(2, 2, 0.8).unwrap();
        let logits = [0.5, 2.0, -1.0];
        let s = style_cw_loss(&img, &logits, 1, 0.0, 0.0, &target).unwrap();
        let (l, g) = cw_loss(&logits, 1, 0.0).unwrap();
        assert_eq!(s.value, l);
        assert_eq!(s.logit_grad, g);
        assert!(s.pixel_grad.iter().all(|&v| v == 0.0));

        let s = style_cw_loss(&target, &logits, 1, 0.0, 1e-4, &target).unwrap();
        assert!(s.pixel_grad.iter().all(|&v| v == 0.0));

        let s = style_cw_loss(&img, &logits, 1, 0.0, 0.5, &target).unwrap();
        assert!((s.value - (l + 0.5 * 12.0 * 0.25)).abs() < 1e-12);
        assert!(s.pixel_grad.iter().all(|&v| (v + 0.5).abs() < 1e-12));

        let small = Image::filled(1, 2, 0.3).unwrap();
        assert!(style_cw_loss(&small, &logits, 1, 0.0, 0.5, &target).is_err());
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold_loss(7.0, 5.0), (7.0, 1.0));
        assert_eq!(threshold_loss(4.0, 5.0), (5.0, 0.0));
        assert!(threshold_reached(4.0, 5.0));
        assert!(!threshold_reached(7.0, 5.0));
    }

    #[test]
    fn pixelwise_examples() {
        let logits = [0.3, -1.2, 2.0];
        let (a, ga) = pixelwise_ce(&logits, 3, &[2]).unwrap();
        let (b, gb) = cross_entropy(&logits, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);

        let (l, g) = pixelwise_ce(&[0.0; 21 * 4], 21, &[0, 5, 20, 3]).unwrap();
        assert!((l - 21f64.ln()).abs() < 1e-14);
        for px in g.chunks(21) {
            assert!(px.iter().sum::<f64>().abs() < 1e-15);
        }
        assert!(pixelwise_ce(&[0.0; 5], 2, &[0, 1]).is_err());
    }

    #[test]
    fn loss_spec_validation() {
        assert!(LossSpec::Cw { kappa: -1.0 }.validate().is_err());
        assert!(LossSpec::StyleCw {
            kappa: 0.0,
            lambda: -1e-4,
            preset: "warm".into()
        }
        .validate()
        .is_err());
        assert!(LossSpec::default().validate().is_ok());
    }
}
