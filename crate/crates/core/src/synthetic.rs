//! Procedural ten-class images in CIFAR layout, for tests, demos and smoke
//! runs where the real dataset is not available.
//!
//! Class `2 * shape + palette`: five shapes (disk, square, horizontal bars,
//! vertical bars, diagonal cross), each drawn in a warm or a cool color over
//! a noisy gray background. Telling the palettes apart needs color, which is
//! what a color filter attacks.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::cifar::{self, TEST_FILE, TRAIN_FILES};
use crate::image::{quantize, Dataset, Image, LabeledImage, Split};

pub const CLASSES: usize = 10;
const SHAPES: usize = 5;
const NOISE: f64 = 0.04;

fn inside(shape: usize, y: f64, x: f64, cy: f64, cx: f64, r: f64) -> bool {
    let (dy, dx) = (y - cy, x - cx);
    match shape {
        0 => dy * dy + dx * dx <= r * r,
        1 => dy.abs() <= r * 0.85 && dx.abs() <= r * 0.85,
        2 => dy.abs() <= r && dx.abs() <= r && ((dy + r) / (r / 2.5)).floor() as i64 % 2 == 0,
        3 => dy.abs() <= r && dx.abs() <= r && ((dx + r) / (r / 2.5)).floor() as i64 % 2 == 0,
        _ => dy.abs() <= r && dx.abs() <= r && ((dy - dx).abs() <= r * 0.3 || (dy + dx).abs() <= r * 0.3),
    }
}

/// One 8-bit image of class `label`.
pub fn synthetic_image<R: Rng + ?Sized>(side: usize, label: usize, rng: &mut R) -> Result<Image> {
    if label >= CLASSES || side < 8 {
        return Err(Error::InvalidParam(format!(
            "synthetic images need label < {CLASSES} and side >= 8, got {label} and {side}"
        )));
    }
    let (shape, warm) = (label / 2 % SHAPES, label.is_multiple_of(2));
    let s = side as f64;
    let r = s * rng.random_range(0.22..0.34);
    let cy = s / 2.0 + rng.random_range(-0.12..0.12) * s;
    let cx = s / 2.0 + rng.random_range(-0.12..0.12) * s;
    let hot = rng.random_range(0.6..0.95);
    let mid = rng.random_range(0.2..0.6);
    let cold = rng.random_range(0.05..0.3);
    let fg = if warm { [hot, mid, cold] } else { [cold, mid, hot] };
    let level = rng.random_range(0.25..0.75);
    let bg: Vec<f64> = (0..3).map(|_| level + rng.random_range(-0.05..0.05)).collect();

    let mut data = vec![0.0; 3 * side * side];
    for y in 0..side {
        for x in 0..side {
            let hit = inside(shape, y as f64 + 0.5, x as f64 + 0.5, cy, cx, r);
            for c in 0..3 {
                let base = if hit { fg[c] } else { bg[c] };
                let noise: f64 = rng.random_range(-NOISE..NOISE);
                data[c * side * side + y * side + x] = base + noise;
            }
        }
    }
    Ok(quantize(&Image::from_clamped(side, side, data)?))
}

/// `len` images with labels cycling through every class.
pub fn synthetic_dataset(len: usize, side: usize, seed: u64, split: Split) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..len)
        .map(|i| {
            let label = i % CLASSES;
            Ok(LabeledImage {
                image: synthetic_image(side, label, &mut rng)?,
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(items, CLASSES, split)
}

/// Writes a CIFAR-10 binary directory (five training batches plus the test
/// batch) holding `train_len` and `test_len` synthetic 32x32 images.
pub fn write_synthetic_cifar(dir: impl AsRef<Path>, train_len: usize, test_len: usize, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let train = synthetic_dataset(train_len, cifar::SIDE, seed, Split::Train)?;
    let per_file = train_len.div_ceil(TRAIN_FILES.len()).max(1);
    for (i, name) in TRAIN_FILES.iter().enumerate() {
        let chunk = train.slice(i * per_file..(i + 1) * per_file, Split::Train);
        cifar::write_batch(chunk.items(), dir.join(name))?;
    }
    let test = synthetic_dataset(test_len, cifar::SIDE, seed ^ 0x5EED, Split::Test)?;
    cifar::write_batch(test.items(), dir.join(TEST_FILE))
}
