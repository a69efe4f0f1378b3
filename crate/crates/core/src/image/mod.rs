//! RGB images with `f64` intensities, labeled datasets and the 8-bit
//! quantization that makes an image realizable on disk.
//!
//! Pixel data is stored channel-major: all red intensities (row-major), then
//! all green, then all blue. This is the same order the CIFAR-10 binary
//! format uses, so loading is a straight copy.

pub mod cifar;
pub mod ppm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from channel-major data, rejecting out-of-range or
    /// non-finite intensities.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, data.len())?;
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidParam(format!(
                "intensity {v} at index {i} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Like [`Image::new`] but clamps every value into `[0, 1]`. NaN becomes 0.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, data.len())?;
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; CHANNELS * height * width])
    }

    /// Builds an image from `f(channel, y, x)`, clamping the result.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(CHANNELS * height * width);
        for c in 0..CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::from_clamped(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Pixels per channel.
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[c * self.plane_len() + y * self.width + x]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    /// Applies `f` to every intensity and clamps the result.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Image::from_clamped(self.height, self.width, data).expect("dimensions unchanged")
    }

    pub fn squared_l2_distance(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn linf_distance(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Per-channel mean intensity.
    pub fn mean_rgb(&self) -> [f64; CHANNELS] {
        let n = self.plane_len() as f64;
        let mut out = [0.0; CHANNELS];
        for (c, m) in out.iter_mut().enumerate() {
            *m = self.channel(c).iter().sum::<f64>() / n;
        }
        out
    }
}

fn check_dims(height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidParam(format!(
            "image dimensions must be positive, got {height}x{width}"
        )));
    }
    let expected = CHANNELS * height * width;
    if len != expected {
        return Err(Error::shape(
            format!("{expected} values for {height}x{width}x3"),
            len,
        ));
    }
    Ok(())
}

/// Rounds a single intensity onto the 8-bit grid, halves rounding up.
pub fn quantize_value(v: f64) -> f64 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) / 255.0
}

/// Snaps every intensity to `round(v * 255) / 255` (round-half-up).
pub fn quantize(image: &Image) -> Image {
    image.map(quantize_value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    items: Vec<LabeledImage>,
    class_count: usize,
    split: Split,
}

impl Dataset {
    /// Validates that every label is below `class_count` and that all images
    /// share one size.
    pub fn new(items: Vec<LabeledImage>, class_count: usize, split: Split) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::InvalidParam(format!(
                "a dataset needs at least 2 classes, got {class_count}"
            )));
        }
        if let Some(first) = items.first() {
            let dims = first.image.dims();
            for (i, item) in items.iter().enumerate() {
                if item.label >= class_count {
                    return Err(Error::InvalidParam(format!(
                        "item {i} has label {} but the dataset has {class_count} classes",
                        item.label
                    )));
                }
                if item.image.dims() != dims {
                    return Err(Error::shape(
                        format!("{dims:?}"),
                        format!("{:?} at item {i}", item.image.dims()),
                    ));
                }
            }
        }
        Ok(Self {
            items,
            class_count,
            split,
        })
    }

    pub fn items(&self) -> &[LabeledImage] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Image size shared by every item, `None` for an empty dataset.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.items.first().map(|i| i.image.dims())
    }

    /// The first `n` items (all of them if `n` exceeds the length).
    pub fn take(&self, n: usize) -> Dataset {
        Dataset {
            items: self.items.iter().take(n).cloned().collect(),
            class_count: self.class_count,
            split: self.split,
        }
    }

    /// Items `range` of this dataset, relabeled with `split`.
    pub fn slice(&self, range: std::ops::Range<usize>, split: Split) -> Dataset {
        let end = range.end.min(self.items.len());
        let start = range.start.min(end);
        Dataset {
            items: self.items[start..end].to_vec(),
            class_count: self.class_count,
            split,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantize_fixed_points() {
        assert_eq!(quantize_value(0.0), 0.0);
        assert_eq!(quantize_value(1.0), 1.0);
        assert_eq!(quantize_value(0.5), 128.0 / 255.0);
    }

    #[test]
    fn rejects_out_of_range_and_bad_dims() {
        assert!(Image::new(1, 1, vec![0.0, 0.5, 1.1]).is_err());
        assert!(Image::new(1, 1, vec![0.0, f64::NAN, 1.0]).is_err());
        assert!(Image::new(0, 1, vec![]).is_err());
        assert!(matches!(
            Image::new(2, 2, vec![0.0; 11]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn channel_major_layout() {
        let img = Image::from_fn(2, 3, |c, y, x| (c * 6 + y * 3 + x) as f64 / 17.0).unwrap();
        assert_eq!(img.get(1, 1, 2), 11.0 / 17.0);
        assert_eq!(img.channel(2)[0], 12.0 / 17.0);
    }

    #[test]
    fn dataset_rejects_bad_labels_and_mixed_sizes() {
        let a = LabeledImage {
            image: Image::filled(2, 2, 0.0).unwrap(),
            label: 0,
        };
        let b = LabeledImage {
            image: Image::filled(3, 2, 0.0).unwrap(),
            label: 1,
        };
        assert!(Dataset::new(vec![a.clone(), b], 10, Split::Train).is_err());
        let bad = LabeledImage {
            label: 10,
            ..a.clone()
        };
        assert!(Dataset::new(vec![a, bad], 10, Split::Train).is_err());
    }

    proptest! {
        #[test]
        fn quantize_is_idempotent_and_bounded(v in 0.0f64..=1.0) {
            let q = quantize_value(v);
            prop_assert_eq!(quantize_value(q), q);
            prop_assert!((q - v).abs() <= 1.0 / 510.0 + 1e-15);
        }
    }
}
