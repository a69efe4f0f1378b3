//! CIFAR-10 binary batches.
//!
//! A batch file is a sequence of 3073-byte records: one label byte followed
//! by 1024 red, 1024 green and 1024 blue bytes, each plane row-major 32x32.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, Image, LabeledImage, Split};
use crate::error::{Error, Result};

pub const SIDE: usize = 32;
pub const CLASSES: usize = 10;
pub const RECORD_LEN: usize = 1 + 3 * SIDE * SIDE;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";
/// Leading test records held out for model selection.
pub const VAL_LEN: usize = 500;

pub const CLASS_NAMES: [&str; CLASSES] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

/// Parses a whole batch file image.
pub fn parse_records(bytes: &[u8]) -> Result<Vec<LabeledImage>> {
    if !bytes.len().is_multiple_of(RECORD_LEN) {
        return Err(Error::format(
            "cifar-10",
            format!(
                "length {} is not a multiple of the {RECORD_LEN}-byte record",
                bytes.len()
            ),
        ));
    }
    bytes
        .chunks_exact(RECORD_LEN)
        .enumerate()
        .map(|(i, rec)| {
            let label = usize::from(rec[0]);
            if label >= CLASSES {
                return Err(Error::format(
                    "cifar-10",
                    format!("record {i} has label byte {label}"),
                ));
            }
            let data = rec[1..].iter().map(|&b| f64::from(b) / 255.0).collect();
            Ok(LabeledImage {
                image: Image::new(SIDE, SIDE, data)?,
                label,
            })
        })
        .collect()
}

pub fn read_batch(path: impl AsRef<Path>) -> Result<Vec<LabeledImage>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_records(&bytes).map_err(|e| match e {
        Error::Format { format, reason } => Error::Format {
            format,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    })
}

/// Serializes labeled 32x32 images as CIFAR-10 records. Intensities are
/// quantized to bytes.
pub fn encode_records(items: &[LabeledImage]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(items.len() * RECORD_LEN);
    for (i, item) in items.iter().enumerate() {
        if item.image.dims() != (SIDE, SIDE) {
            return Err(Error::shape(
                "32x32 image",
                format!("{:?} at item {i}", item.image.dims()),
            ));
        }
        let label = u8::try_from(item.label)
            .ok()
            .filter(|&l| usize::from(l) < CLASSES)
            .ok_or_else(|| Error::InvalidParam(format!("label {} at item {i}", item.label)))?;
        out.push(label);
        out.extend(
            item.image
                .data()
                .iter()
                .map(|&v| (super::quantize_value(v) * 255.0).round() as u8),
        );
    }
    Ok(out)
}

pub fn write_batch(items: &[LabeledImage], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_records(items)?).map_err(|e| Error::io(path, e))
}

/// Accepts either the directory holding the batch files or its parent (the
/// official archive unpacks into `cifar-10-batches-bin/`).
fn resolve_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if !dir.join(TEST_FILE).exists() && nested.join(TEST_FILE).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Loads the five training batches and the test batch, splitting the test
/// batch into the first [`VAL_LEN`] records (validation) and the rest (test).
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset, Dataset)> {
    let dir = resolve_dir(dir.as_ref());
    let mut train = Vec::new();
    for name in TRAIN_FILES {
        train.extend(read_batch(dir.join(name))?);
    }
    let mut test = read_batch(dir.join(TEST_FILE))?;
    let rest = test.split_off(VAL_LEN.min(test.len()));
    Ok((
        Dataset::new(train, CLASSES, Split::Train)?,
        Dataset::new(test, CLASSES, Split::Val)?,
        Dataset::new(rest, CLASSES, Split::Test)?,
    ))
}
