//! Piecewise-linear per-channel color curves.
//!
//! Each channel's curve splits `[0, 1]` into `K` equal pieces. Piece `k`
//! rises by `theta[k] / sum(theta)`, so the curve always runs from (0, 0) to
//! (1, 1), is monotone for non-negative weights, and only the ratios between
//! weights matter. Uniform weights give the identity map.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};

/// Per-channel curve weights: a `3 x K` matrix stored row-major (R, G, B)
/// together with the bound `epsilon` that [`FilterParams::clip`] enforces.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams {
    pieces: usize,
    epsilon: f64,
    theta: Vec<f64>,
}

impl FilterParams {
    pub fn new(pieces: usize, epsilon: f64, theta: Vec<f64>) -> Result<Self> {
        validate_shape(pieces, epsilon)?;
        if theta.len() != CHANNELS * pieces {
            return Err(Error::shape(
                format!("{} weights (3 x {pieces})", CHANNELS * pieces),
                theta.len(),
            ));
        }
        if let Some(v) = theta.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidParam(format!(
                "filter weights must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self {
            pieces,
            epsilon,
            theta,
        })
    }

    /// Uniform weights `1/K`: the identity curve and the attack's starting point.
    pub fn identity(pieces: usize, epsilon: f64) -> Result<Self> {
        validate_shape(pieces, epsilon)?;
        Ok(Self {
            pieces,
            epsilon,
            theta: vec![1.0 / pieces as f64; CHANNELS * pieces],
        })
    }

    pub fn pieces(&self) -> usize {
        self.pieces
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.theta[c * self.pieces..(c + 1) * self.pieces]
    }

    pub fn bounds(&self) -> (f64, f64) {
        let k = self.pieces as f64;
        (1.0 / k, self.epsilon / k)
    }

    /// Replaces the weights, keeping `K` and `epsilon`.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        Self::new(self.pieces, self.epsilon, theta)
    }

    /// Clamps every weight into `[1/K, epsilon/K]`.
    pub fn clip(&self) -> Self {
        let (lo, hi) = self.bounds();
        Self {
            pieces: self.pieces,
            epsilon: self.epsilon,
            theta: self.theta.iter().map(|v| v.clamp(lo, hi)).collect(),
        }
    }

    /// `clip(theta - scale * direction)`.
    pub fn step_and_clip(&self, direction: &[f64], scale: f64) -> Self {
        let (lo, hi) = self.bounds();
        Self {
            pieces: self.pieces,
            epsilon: self.epsilon,
            theta: self
                .theta
                .iter()
                .zip(direction)
                .map(|(w, d)| (w - scale * d).clamp(lo, hi))
                .collect(),
        }
    }

    pub fn is_within_bounds(&self) -> bool {
        let (lo, hi) = self.bounds();
        self.theta.iter().all(|v| (lo..=hi).contains(v))
    }

    /// Plain-text form: `K epsilon` on the first line, then one line of `K`
    /// weights per channel. Values use the shortest exact decimal.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.pieces, self.epsilon);
        for c in 0..CHANNELS {
            let row: Vec<String> = self.channel(c).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }
}

impl FromStr for FilterParams {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: String| Error::format("filter", why);
        let mut lines = s.lines().filter(|l| !l.trim().is_empty());
        let head = lines.next().ok_or_else(|| bad("empty input".into()))?;
        let mut head = head.split_whitespace();
        let pieces: usize = head
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("missing piece count".into()))?;
        let epsilon: f64 = head
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("missing epsilon".into()))?;
        let mut theta = Vec::with_capacity(CHANNELS * pieces);
        for c in 0..CHANNELS {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("missing row for channel {c}")))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad(format!("bad weight {t:?}"))))
                .collect::<Result<_>>()?;
            if row.len() != pieces {
                return Err(bad(format!(
                    "channel {c} has {} weights, expected {pieces}",
                    row.len()
                )));
            }
            theta.extend(row);
        }
        if lines.next().is_some() {
            return Err(bad("trailing content".into()));
        }
        FilterParams::new(pieces, epsilon, theta)
    }
}

fn validate_shape(pieces: usize, epsilon: f64) -> Result<()> {
    if pieces < 2 {
        return Err(Error::InvalidParam(format!(
            "a filter needs at least 2 pieces, got {pieces}"
        )));
    }
    if !(epsilon >= 1.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "filter bound epsilon must be >= 1, got {epsilon}"
        )));
    }
    Ok(())
}

/// Piece index (0-based) and position within the piece for intensity `x`.
/// `x = 1` falls in the last piece at `t = 1`.
#[inline]
fn locate(x: f64, pieces: usize) -> (usize, f64) {
    let scaled = pieces as f64 * x;
    let k = (scaled.floor().max(0.0) as usize).min(pieces - 1);
    (k, scaled - k as f64)
}

/// Prefix sums `cum[k] = sum(theta[..k])` and the channel total.
fn prefix_sums(weights: &[f64]) -> (Vec<f64>, f64) {
    let mut cum = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &w in weights {
        cum.push(acc);
        acc += w;
    }
    (cum, acc)
}

fn channel_total(params: &FilterParams, c: usize) -> Result<f64> {
    let total: f64 = params.channel(c).iter().sum();
    if total > 0.0 {
        Ok(total)
    } else {
        Err(Error::InvalidParam(format!(
            "filter weights of channel {c} sum to zero"
        )))
    }
}

/// Evaluates one channel's curve at `x`.
pub fn curve_value(weights: &[f64], x: f64) -> f64 {
    let (cum, total) = prefix_sums(weights);
    let (k, t) = locate(x, weights.len());
    ((cum[k] + t * weights[k]) / total).clamp(0.0, 1.0)
}

/// Maps every pixel of every channel through that channel's curve.
pub fn apply_filter(image: &Image, params: &FilterParams) -> Result<Image> {
    let k = params.pieces();
    let mut data = Vec::with_capacity(image.data().len());
    for c in 0..CHANNELS {
        let weights = params.channel(c);
        let total = channel_total(params, c)?;
        if weights.iter().all(|&w| w == weights[0]) {
            // uniform weights are the identity; skip the rounding in the prefix sums
            data.extend_from_slice(image.channel(c));
            continue;
        }
        let (cum, _) = prefix_sums(weights);
        data.extend(image.channel(c).iter().map(|&x| {
            let (p, t) = locate(x, k);
            ((cum[p] + t * weights[p]) / total).clamp(0.0, 1.0)
        }));
    }
    Image::new(image.height(), image.width(), data)
}

/// Gradient of a scalar loss with respect to the filter weights, given the
/// loss gradient `upstream` with respect to the filtered image (same layout
/// as the image data).
///
/// For a pixel in piece `k` with in-piece position `t` and output `F`, the
/// partial derivative of `F` with respect to weight `j` is `(1 - F) / S` for
/// `j < k`, `(t - F) / S` for `j = k`, and `-F / S` for `j > k`, where `S` is
/// the channel's weight sum. Contributions are bucketed per piece so the whole
/// pass is `O(pixels + K)` per channel.
pub fn filter_param_gradient(
    image: &Image,
    params: &FilterParams,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    if upstream.len() != image.data().len() {
        return Err(Error::shape(image.data().len(), upstream.len()));
    }
    let k = params.pieces();
    let plane = image.plane_len();
    let mut grad = vec![0.0; CHANNELS * k];
    for c in 0..CHANNELS {
        let weights = params.channel(c);
        let total = channel_total(params, c)?;
        let (cum, _) = prefix_sums(weights);
        // below[p]: upstream mass of pixels in piece p (feeds every j < p)
        // at[p]: upstream * t for pixels in piece p
        // all: upstream * F over every pixel (feeds every j)
        let mut below = vec![0.0; k];
        let mut at = vec![0.0; k];
        let mut all = 0.0;
        let xs = image.channel(c);
        let us = &upstream[c * plane..(c + 1) * plane];
        for (&x, &u) in xs.iter().zip(us) {
            let (p, t) = locate(x, k);
            let f = (cum[p] + t * weights[p]) / total;
            below[p] += u;
            at[p] += u * t;
            all += u * f;
        }
        let out = &mut grad[c * k..(c + 1) * k];
        let mut above = 0.0;
        for j in (0..k).rev() {
            out[j] = (above + at[j] - all) / total;
            above += below[j];
        }
    }
    Ok(grad)
}

/// Draws every weight independently and uniformly from `[1/K, epsilon/K]`.
pub fn sample_params_uniform<R: Rng + ?Sized>(
    pieces: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<FilterParams> {
    validate_shape(pieces, epsilon)?;
    let k = pieces as f64;
    let (lo, hi) = (1.0 / k, epsilon / k);
    let theta = (0..CHANNELS * pieces)
        .map(|_| lo + (hi - lo) * rng.random::<f64>())
        .collect();
    FilterParams::new(pieces, epsilon, theta)
}

/// Built-in color styles used as targets for style-guided attacks.
pub mod presets {
    use super::FilterParams;
    use crate::error::{Error, Result};

    pub const NAMES: [&str; 3] = ["warm", "cool", "fade"];

    // Decreasing weights brighten (concave curve), increasing ones darken.
    const LIFT: [f64; 8] = [1.6, 1.4, 1.25, 1.1, 1.0, 0.9, 0.8, 0.7];
    const SINK: [f64; 8] = [0.7, 0.8, 0.9, 1.0, 1.1, 1.25, 1.4, 1.6];
    const FLAT: [f64; 8] = [1.1, 1.05, 1.0, 1.0, 1.0, 1.0, 0.95, 0.9];
    // steep ends and a shallow middle pull mid-tones together
    const FADE: [f64; 8] = [1.6, 1.2, 0.8, 0.6, 0.6, 0.8, 1.2, 1.6];

    pub fn preset(name: &str) -> Result<FilterParams> {
        let rows: [&[f64; 8]; 3] = match name {
            "warm" => [&LIFT, &FLAT, &SINK],
            "cool" => [&SINK, &FLAT, &LIFT],
            "fade" => [&FADE, &FADE, &FADE],
            other => {
                return Err(Error::Config(format!(
                    "unknown style preset {other:?} (known: {})",
                    NAMES.join(", ")
                )))
            }
        };
        let theta = rows.iter().flat_map(|r| r.iter().map(|v| v / 8.0)).collect();
        FilterParams::new(8, 1.0, theta)
    }
}
