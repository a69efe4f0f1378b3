//! Input transformations applied before classification.

mod jpeg;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use jpeg::{jpeg_roundtrip, quality_scaled_table, CHROMA_BASE, LUMA_BASE};

use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

pub const DEFAULT_JPEG_QUALITY: u8 = 30;

/// Luma replicated to all three channels. Gray pixels pass through exactly,
/// which makes the transform idempotent despite the rounding in the weights.
pub fn grayscale(image: &Image) -> Image {
    let n = image.plane_len();
    let (r, g, b) = (image.channel(0), image.channel(1), image.channel(2));
    let luma: Vec<f64> = (0..n)
        .map(|i| {
            if r[i] == g[i] && g[i] == b[i] {
                r[i]
            } else {
                LUMA_WEIGHTS[0] * r[i] + LUMA_WEIGHTS[1] * g[i] + LUMA_WEIGHTS[2] * b[i]
            }
        })
        .collect();
    let data = luma.iter().cycle().take(CHANNELS * n).copied().collect();
    Image::from_clamped(image.height(), image.width(), data).expect("same dimensions")
}

/// Maps an out-of-range index back inside `0..len` by mirroring about the
/// edge with the edge sample repeated (`c b a | a b c | c b a`).
fn mirror(i: isize, len: usize) -> usize {
    let len = len as isize;
    let period = 2 * len;
    let m = i.rem_euclid(period);
    (if m < len { m } else { period - 1 - m }) as usize
}

/// Per-channel 3x3 median with mirrored borders.
pub fn median_filter3(image: &Image) -> Image {
    let (h, w) = image.dims();
    let mut out = Vec::with_capacity(image.data().len());
    let mut window = [0.0f64; 9];
    for c in 0..CHANNELS {
        let plane = image.channel(c);
        for y in 0..h {
            for x in 0..w {
                let mut n = 0;
                for dy in -1..=1isize {
                    let yy = mirror(y as isize + dy, h);
                    for dx in -1..=1isize {
                        window[n] = plane[yy * w + mirror(x as isize + dx, w)];
                        n += 1;
                    }
                }
                window.sort_unstable_by(f64::total_cmp);
                out.push(window[4]);
            }
        }
    }
    Image::from_clamped(h, w, out).expect("same dimensions")
}

/// Bilinear resize with half-pixel sample centers and clamped edges.
pub fn resize_bilinear(image: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidParam("resize target must be non-empty".into()));
    }
    let (h, w) = image.dims();
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|d| {
                let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let (ty, tx) = (taps(out_h, h), taps(out_w, w));
    let mut data = Vec::with_capacity(CHANNELS * out_h * out_w);
    for c in 0..CHANNELS {
        let p = image.channel(c);
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bottom = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Image::from_clamped(out_h, out_w, data)
}

/// Extra canvas side used by [`random_resize_pad`] for a side-`s` image.
pub fn pad_budget(side: usize) -> usize {
    side.div_ceil(9)
}

/// Resizes a square image to `side`, pastes it on a black `canvas` square at
/// `(offset_y, offset_x)`, and resizes the canvas back to the input side.
pub fn resize_pad_with(
    image: &Image,
    side: usize,
    canvas: usize,
    offset_y: usize,
    offset_x: usize,
) -> Result<Image> {
    let s = square_side(image)?;
    if side == 0 || side > canvas || offset_y + side > canvas || offset_x + side > canvas {
        return Err(Error::InvalidParam(format!(
            "side {side} at ({offset_y}, {offset_x}) does not fit a {canvas} canvas"
        )));
    }
    let resized = resize_bilinear(image, side, side)?;
    let mut data = vec![0.0; CHANNELS * canvas * canvas];
    for c in 0..CHANNELS {
        let src = resized.channel(c);
        for y in 0..side {
            let dst = c * canvas * canvas + (y + offset_y) * canvas + offset_x;
            data[dst..dst + side].copy_from_slice(&src[y * side..(y + 1) * side]);
        }
    }
    let padded = Image::from_clamped(canvas, canvas, data)?;
    resize_bilinear(&padded, s, s)
}

/// Random resizing and padding: side `r` uniform in `[S, S + pad]`, offset
/// uniform over the positions that fit an `S + pad` canvas.
pub fn random_resize_pad<R: Rng + ?Sized>(image: &Image, rng: &mut R) -> Result<Image> {
    let s = square_side(image)?;
    let canvas = s + pad_budget(s);
    let side = rng.random_range(s..=canvas);
    let offset_y = rng.random_range(0..=canvas - side);
    let offset_x = rng.random_range(0..=canvas - side);
    resize_pad_with(image, side, canvas, offset_y, offset_x)
}

fn square_side(image: &Image) -> Result<usize> {
    let (h, w) = image.dims();
    if h != w {
        return Err(Error::shape("a square image", format!("{h}x{w}")));
    }
    Ok(h)
}

/// A defense addressable by name: `identity`, `grayscale`, `median3`,
/// `jpeg:Q` (bare `jpeg` means Q = 30) or `resize_pad`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Defense {
    Identity,
    Grayscale,
    Median3,
    Jpeg { quality: u8 },
    ResizePad,
}

impl Defense {
    /// Applies the transformation. Only `resize_pad` consumes `seed`.
    pub fn apply(&self, image: &Image, seed: u64) -> Result<Image> {
        match *self {
            Defense::Identity => Ok(image.clone()),
            Defense::Grayscale => Ok(grayscale(image)),
            Defense::Median3 => Ok(median_filter3(image)),
            Defense::Jpeg { quality } => jpeg_roundtrip(image, quality),
            Defense::ResizePad => random_resize_pad(image, &mut ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

impl fmt::Display for Defense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defense::Identity => f.write_str("identity"),
            Defense::Grayscale => f.write_str("grayscale"),
            Defense::Median3 => f.write_str("median3"),
            Defense::Jpeg { quality } => write!(f, "jpeg:{quality}"),
            Defense::ResizePad => f.write_str("resize_pad"),
        }
    }
}

impl FromStr for Defense {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "identity" | "none" => Defense::Identity,
            "grayscale" => Defense::Grayscale,
            "median3" => Defense::Median3,
            "resize_pad" => Defense::ResizePad,
            "jpeg" => Defense::Jpeg {
                quality: DEFAULT_JPEG_QUALITY,
            },
            _ => {
                let q = s
                    .strip_prefix("jpeg:")
                    .ok_or_else(|| Error::Config(format!("unknown defense {s:?}")))?;
                let quality = q
                    .parse::<u8>()
                    .ok()
                    .filter(|q| (1..=100).contains(q))
                    .ok_or_else(|| Error::Config(format!("JPEG quality must be 1..=100, got {q:?}")))?;
                Defense::Jpeg { quality }
            }
        })
    }
}

impl TryFrom<String> for Defense {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Defense> for String {
    fn from(d: Defense) -> String {
        d.to_string()
    }
}
