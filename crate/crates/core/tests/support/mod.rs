//! Test oracles shared by the integration tests.
#![allow(dead_code)]

use advcf_core::filter::FilterParams;
use advcf_core::model::{TinyCnn, Trainable};
use advcf_core::Image;
use rand::Rng;

/// Straightforward f64 re-implementation of TinyCNN's forward pass, reading
/// the weights out of the flat parameter buffer by tensor shape.
pub struct RefCnn {
    side: usize,
    c1: usize,
    c2: usize,
    classes: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    wf: Vec<f64>,
    bf: Vec<f64>,
}

impl RefCnn {
    pub fn from_model(net: &TinyCnn) -> RefCnn {
        let s = net.shape();
        let params: Vec<f64> = net.params().iter().map(|&v| f64::from(v)).collect();
        let sizes = [
            s.conv1 * 3 * 9,
            s.conv1,
            s.conv2 * s.conv1 * 9,
            s.conv2,
            s.classes * s.conv2 * (s.side / 4) * (s.side / 4),
            s.classes,
        ];
        assert_eq!(sizes.iter().sum::<usize>(), params.len());
        let mut rest = params.as_slice();
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        RefCnn {
            side: s.side,
            c1: s.conv1,
            c2: s.conv2,
            classes: s.classes,
            w1: take(sizes[0]),
            b1: take(sizes[1]),
            w2: take(sizes[2]),
            b2: take(sizes[3]),
            wf: take(sizes[4]),
            bf: take(sizes[5]),
        }
    }

    fn conv(x: &[f64], cin: usize, n: usize, w: &[f64], b: &[f64], cout: usize) -> Vec<f64> {
        let mut out = vec![0.0; cout * n * n];
        for o in 0..cout {
            for y in 0..n {
                for xx in 0..n {
                    let mut acc = b[o];
                    for i in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                if sy < 0 || sx < 0 || sy >= n as isize || sx >= n as isize {
                                    continue;
                                }
                                acc += w[((o * cin + i) * 3 + ky) * 3 + kx]
                                    * x[(i * n + sy as usize) * n + sx as usize];
                            }
                        }
                    }
                    out[(o * n + y) * n + xx] = acc.max(0.0);
                }
            }
        }
        out
    }

    fn pool(x: &[f64], c: usize, n: usize) -> Vec<f64> {
        let h = n / 2;
        let mut out = vec![0.0; c * h * h];
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..h {
                    let at = |dy: usize, dx: usize| x[(ch * n + 2 * y + dy) * n + 2 * xx + dx];
                    out[(ch * h + y) * h + xx] = at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1));
                }
            }
        }
        out
    }

    pub fn logits(&self, image: &Image) -> Vec<f64> {
        let x: Vec<f64> = image.data().iter().map(|v| v - 0.5).collect();
        let a1 = Self::pool(&Self::conv(&x, 3, self.side, &self.w1, &self.b1, self.c1), self.c1, self.side);
        let h2 = self.side / 2;
        let a2 = Self::pool(&Self::conv(&a1, self.c1, h2, &self.w2, &self.b2, self.c2), self.c2, h2);
        (0..self.classes)
            .map(|k| {
                let row = &self.wf[k * a2.len()..(k + 1) * a2.len()];
                self.bf[k] + row.iter().zip(&a2).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }
}

/// Central difference `(f(x + h) - f(x - h)) / 2h`.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Five-point stencil, fourth order in `h`.
pub fn five_point_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

pub fn random_image<R: Rng>(rng: &mut R, h: usize, w: usize) -> Image {
    let data = (0..3 * h * w).map(|_| rng.random::<f64>()).collect();
    Image::new(h, w, data).unwrap()
}

/// Weights uniform in `[lo, hi]` for every channel.
pub fn random_params<R: Rng>(rng: &mut R, pieces: usize, epsilon: f64, lo: f64, hi: f64) -> FilterParams {
    let theta = (0..3 * pieces).map(|_| rng.random_range(lo..=hi)).collect();
    FilterParams::new(pieces, epsilon, theta).unwrap()
}

/// Worst relative error of a logit-space loss gradient against the
/// five-point stencil, over every coordinate.
pub fn check_logit_loss(f: impl Fn(&[f64]) -> (f64, Vec<f64>), logits: &[f64]) -> f64 {
    let (_, grad) = f(logits);
    (0..logits.len())
        .map(|j| {
            let numeric = five_point_diff(
                |t| {
                    let mut z = logits.to_vec();
                    z[j] = t;
                    f(&z).0
                },
                logits[j],
                1e-3,
            );
            if grad[j] == 0.0 && numeric.abs() < 1e-10 {
                0.0
            } else {
                rel_err(grad[j], numeric)
            }
        })
        .fold(0.0, f64::max)
}

/// Shuffled logits at least 0.2 apart.
pub fn separated_logits<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    // spacing keeps every finite-difference probe away from ties
    let mut z: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 + rng.random_range(0.0..0.3)).collect();
    for i in (1..n).rev() {
        z.swap(i, rng.random_range(0..=i));
    }
    z
}
