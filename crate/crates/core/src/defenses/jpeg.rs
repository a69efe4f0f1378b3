//! Baseline JPEG round trip without entropy coding: quantization is the only
//! lossy step, so skipping the Huffman stage leaves the decoded pixels
//! unchanged.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::image::{quantize_value, Image};

/// Luminance table in natural (row-major) order.
pub const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

pub const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Scales a base table the way libjpeg does for baseline output.
pub fn quality_scaled_table(base: &[u16; 64], quality: u8) -> Result<[f64; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidParam(format!("JPEG quality must be 1..=100, got {quality}")));
    }
    let q = u32::from(quality);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((u32::from(b) * scale + 50) / 100).clamp(1, 255) as f64;
    }
    Ok(out)
}

fn dct_matrix() -> &'static [[f64; 8]; 8] {
    static M: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    M.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (u, row) in m.iter_mut().enumerate() {
            let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { 0.25f64.sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = a * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        m
    })
}

/// In-place 2-D transform of one block: `M B M^T`, or `M^T B M` when inverse.
fn transform(block: &mut [f64; 64], inverse: bool) {
    let m = dct_matrix();
    let coef = |i: usize, j: usize| if inverse { m[j][i] } else { m[i][j] };
    let mut tmp = [0.0; 64];
    for u in 0..8 {
        for x in 0..8 {
            tmp[u * 8 + x] = (0..8).map(|k| coef(u, k) * block[k * 8 + x]).sum();
        }
    }
    for u in 0..8 {
        for v in 0..8 {
            block[u * 8 + v] = (0..8).map(|k| tmp[u * 8 + k] * coef(v, k)).sum();
        }
    }
}

/// A plane padded to whole 8x8 blocks by edge replication.
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn padded(src: &[f64], h: usize, w: usize) -> Plane {
        let (ph, pw) = (h.div_ceil(8) * 8, w.div_ceil(8) * 8);
        let mut data = Vec::with_capacity(ph * pw);
        for y in 0..ph {
            let row = &src[y.min(h - 1) * w..][..w];
            data.extend((0..pw).map(|x| row[x.min(w - 1)]));
        }
        Plane { h: ph, w: pw, data }
    }

    /// Quantize and dequantize every block's coefficients.
    fn requantize(&mut self, table: &[f64; 64]) {
        let mut block = [0.0; 64];
        for by in (0..self.h).step_by(8) {
            for bx in (0..self.w).step_by(8) {
                for y in 0..8 {
                    block[y * 8..y * 8 + 8]
                        .copy_from_slice(&self.data[(by + y) * self.w + bx..][..8]);
                }
                for v in &mut block {
                    *v -= 128.0;
                }
                transform(&mut block, false);
                for (v, q) in block.iter_mut().zip(table) {
                    *v = (*v / q).round() * q;
                }
                transform(&mut block, true);
                // decoders hand out 8-bit samples
                for y in 0..8 {
                    for x in 0..8 {
                        self.data[(by + y) * self.w + bx + x] =
                            (block[y * 8 + x] + 128.0).round().clamp(0.0, 255.0);
                    }
                }
            }
        }
    }
}

/// Doubles a `ch x cw` chroma plane to `h x w` with libjpeg's default
/// triangle filter: each output sample weighs its nearest input 9/16, the two
/// adjacent ones 3/16 each and the diagonal one 1/16, replicating edges.
fn upsample_triangle(plane: &Plane, ch: usize, cw: usize, h: usize, w: usize) -> Vec<f64> {
    let at = |y: usize, x: usize| plane.data[y * plane.w + x];
    let mut out = Vec::with_capacity(h * w);
    let mut colsum = vec![0.0; cw];
    for y in 0..h {
        let near = y / 2;
        let far = if y % 2 == 0 { near.saturating_sub(1) } else { (near + 1).min(ch - 1) };
        for (x, s) in colsum.iter_mut().enumerate() {
            *s = 3.0 * at(near, x) + at(far, x);
        }
        for x in 0..w {
            let c = x / 2;
            let (other, bias) = if x % 2 == 0 {
                (c.saturating_sub(1), 8.0)
            } else {
                ((c + 1).min(cw - 1), 7.0)
            };
            out.push(((3.0 * colsum[c] + colsum[other] + bias) / 16.0).floor());
        }
    }
    out
}

/// Encodes at `quality` (RGB to YCbCr, 2x2 chroma averaging, 8x8 DCT,
/// scaled standard tables) and decodes back to 8-bit values.
pub fn jpeg_roundtrip(image: &Image, quality: u8) -> Result<Image> {
    let luma_table = quality_scaled_table(&LUMA_BASE, quality)?;
    let chroma_table = quality_scaled_table(&CHROMA_BASE, quality)?;
    let (h, w) = image.dims();
    let n = h * w;
    let (r, g, b) = (image.channel(0), image.channel(1), image.channel(2));
    let mut y_plane = vec![0.0; n];
    let mut cb = vec![0.0; n];
    let mut cr = vec![0.0; n];
    for i in 0..n {
        let (r, g, b) = (255.0 * r[i], 255.0 * g[i], 255.0 * b[i]);
        y_plane[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        cb[i] = -0.168_735_892 * r - 0.331_264_108 * g + 0.5 * b + 128.0;
        cr[i] = 0.5 * r - 0.418_687_589 * g - 0.081_312_411 * b + 128.0;
    }

    let (ch, cw) = (h.div_ceil(2), w.div_ceil(2));
    let subsample = |plane: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(ch * cw);
        for y in 0..ch {
            for x in 0..cw {
                let ys = [2 * y, (2 * y + 1).min(h - 1)];
                let xs = [2 * x, (2 * x + 1).min(w - 1)];
                let sum: f64 = ys.iter().flat_map(|&yy| xs.iter().map(move |&xx| plane[yy * w + xx])).sum();
                out.push(sum / 4.0);
            }
        }
        out
    };

    let mut lum = Plane::padded(&y_plane, h, w);
    lum.requantize(&luma_table);
    let mut chroma = [subsample(&cb), subsample(&cr)].map(|p| Plane::padded(&p, ch, cw));
    for p in &mut chroma {
        p.requantize(&chroma_table);
    }

    let [cb_full, cr_full] = [&chroma[0], &chroma[1]].map(|p| upsample_triangle(p, ch, cw, h, w));
    let mut out = vec![0.0; 3 * n];
    for y in 0..h {
        for x in 0..w {
            let yy = lum.data[y * lum.w + x];
            let (cb, cr) = (cb_full[y * w + x] - 128.0, cr_full[y * w + x] - 128.0);
            let rgb = [
                yy + 1.402 * cr,
                yy - 0.344_136_286 * cb - 0.714_136_286 * cr,
                yy + 1.772 * cb,
            ];
            for (c, v) in rgb.into_iter().enumerate() {
                out[c * n + y * w + x] = quantize_value(v / 255.0);
            }
        }
    }
    Image::from_clamped(h, w, out)
}
