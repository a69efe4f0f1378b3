//! Checkpoint files.
//!
//! ```text
//! ADVCF-CHECKPOINT 1
//! arch tiny_cnn
//! shape 32 16 32 10
//! meta epochs 30
//! meta seed 7
//! ...
//! tensor conv1.weight 16 3 3 3
//! ...
//! payload f32le 25578 sha256 <hex>
//! end
//! <little-endian f32 parameters, tensors in header order>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::probe::{self, LinearColorProbe};
use super::tiny_cnn::{self, TinyCnn, TinyCnnShape};
use super::{Model, Trainable};
use crate::error::{Error, Result};

const MAGIC: &str = "ADVCF-CHECKPOINT 1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub seed: u64,
    /// Clean validation accuracy of the stored parameters.
    pub val_accuracy: f64,
    /// 1-based epoch the parameters come from; 0 for untrained weights.
    pub best_epoch: usize,
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: TrainingMeta,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let model = self.model.as_trainable();
        let mut header = format!("{MAGIC}\narch {}\n", model.arch_tag());
        match &self.model {
            Model::TinyCnn(m) => {
                let s = m.shape();
                let _ = writeln!(header, "shape {} {} {} {}", s.side, s.conv1, s.conv2, s.classes);
            }
            Model::LinearProbe(m) => {
                use super::Classifier;
                let _ = writeln!(header, "shape {}", m.class_count());
            }
        }
        let meta = &self.meta;
        let _ = writeln!(header, "meta epochs {}", meta.epochs);
        let _ = writeln!(header, "meta seed {}", meta.seed);
        let _ = writeln!(header, "meta val_accuracy {}", meta.val_accuracy);
        let _ = writeln!(header, "meta best_epoch {}", meta.best_epoch);
        for (k, v) in &meta.extra {
            let _ = writeln!(header, "meta x.{k} {}", v.replace('\n', " "));
        }
        for (name, dims) in model.tensors() {
            let dims: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(header, "tensor {name} {}", dims.join(" "));
        }
        let payload: Vec<u8> = model.params().iter().flat_map(|v| v.to_le_bytes()).collect();
        let _ = writeln!(
            header,
            "payload f32le {} sha256 {}",
            model.params().len(),
            hex(&Sha256::digest(&payload))
        );
        header.push_str("end\n");
        let mut out = header.into_bytes();
        out.extend(payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |why: String| Error::Checkpoint(why);
        let end = find_header_end(bytes).ok_or_else(|| bad("missing header terminator".into()))?;
        let header = std::str::from_utf8(&bytes[..end])
            .map_err(|_| bad("header is not UTF-8".into()))?;
        let payload = &bytes[end..];

        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let mut arch = None;
        let mut shape: Vec<usize> = Vec::new();
        let mut meta = TrainingMeta::default();
        let mut tensors: Vec<(String, Vec<usize>)> = Vec::new();
        let mut declared: Option<(usize, String)> = None;
        for line in lines {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "arch" => arch = Some(rest.to_string()),
                "shape" => shape = parse_usizes(rest).ok_or_else(|| bad(format!("bad shape {rest:?}")))?,
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    let num = |what: &str| bad(format!("bad meta {what} {v:?}"));
                    match k {
                        "epochs" => meta.epochs = v.parse().map_err(|_| num(k))?,
                        "seed" => meta.seed = v.parse().map_err(|_| num(k))?,
                        "val_accuracy" => meta.val_accuracy = v.parse().map_err(|_| num(k))?,
                        "best_epoch" => meta.best_epoch = v.parse().map_err(|_| num(k))?,
                        other => {
                            let name = other.strip_prefix("x.").unwrap_or(other);
                            meta.extra.insert(name.to_string(), v.to_string());
                        }
                    }
                }
                "tensor" => {
                    let (name, dims) = rest.split_once(' ').unwrap_or((rest, ""));
                    let dims = parse_usizes(dims).ok_or_else(|| bad(format!("bad tensor line {line:?}")))?;
                    tensors.push((name.to_string(), dims));
                }
                "payload" => {
                    let parts: Vec<&str> = rest.split(' ').collect();
                    match parts.as_slice() {
                        ["f32le", n, "sha256", digest] => {
                            let n = n.parse().map_err(|_| bad(format!("bad payload line {line:?}")))?;
                            declared = Some((n, digest.to_string()));
                        }
                        _ => return Err(bad(format!("bad payload line {line:?}"))),
                    }
                }
                "end" => {}
                other => return Err(bad(format!("unknown header key {other:?}"))),
            }
        }

        let arch = arch.ok_or_else(|| bad("missing arch".into()))?;
        let (count, digest) = declared.ok_or_else(|| bad("missing payload line".into()))?;
        if payload.len() != count * 4 {
            return Err(bad(format!(
                "payload holds {} bytes, header declares {} f32 values",
                payload.len(),
                count
            )));
        }
        if hex(&Sha256::digest(payload)) != digest {
            return Err(bad("payload checksum mismatch".into()));
        }
        let params: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();

        let model: Model = match (arch.as_str(), shape.as_slice()) {
            (tiny_cnn::ARCH_TAG, &[side, conv1, conv2, classes]) => TinyCnn::from_params(
                TinyCnnShape {
                    side,
                    conv1,
                    conv2,
                    classes,
                },
                params,
            )?
            .into(),
            (probe::ARCH_TAG, &[classes]) => {
                if params.len() != classes * 4 {
                    return Err(bad(format!("probe payload has {} values", params.len())));
                }
                let bias = params[classes * 3..].to_vec();
                let mut weights = params;
                weights.truncate(classes * 3);
                LinearColorProbe::new(weights, bias)?.into()
            }
            (tiny_cnn::ARCH_TAG | probe::ARCH_TAG, _) => {
                return Err(bad(format!("bad shape {shape:?} for {arch}")))
            }
            _ => return Err(bad(format!("unknown architecture {arch:?}"))),
        };
        if model.tensors() != tensors {
            return Err(bad("tensor table does not match the architecture".into()));
        }
        Ok(Checkpoint { model, meta })
    }
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    const TERM: &[u8] = b"\nend\n";
    bytes
        .windows(TERM.len())
        .position(|w| w == TERM)
        .map(|p| p + TERM.len())
}

fn parse_usizes(s: &str) -> Option<Vec<usize>> {
    s.split_whitespace().map(|t| t.parse().ok()).collect()
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint; with `expected_arch` set, any other architecture is
/// rejected.
pub fn load_checkpoint(path: impl AsRef<Path>, expected_arch: Option<&str>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Err(Error::Checkpoint(format!("{} is empty", path.display())));
    }
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    if let Some(want) = expected_arch {
        let got = ckpt.model.arch_tag();
        if got != want {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: expected {want}, file holds {got}"
            )));
        }
    }
    Ok(ckpt)
}

/// Short content hash identifying a checkpoint in reports.
pub fn model_id(checkpoint: &Checkpoint) -> String {
    hex(&Sha256::digest(checkpoint.to_bytes()))[..16].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::model::Classifier;

    fn sample() -> Checkpoint {
        let mut extra = BTreeMap::new();
        extra.insert("note".into(), "unit test".into());
        Checkpoint {
            model: TinyCnn::new(TinyCnnShape::default(), 3).unwrap().into(),
            meta: TrainingMeta {
                epochs: 4,
                seed: 3,
                val_accuracy: 0.625,
                best_epoch: 2,
                extra,
            },
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ckpt = sample();
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path, Some("tiny_cnn")).unwrap();
        assert_eq!(back, ckpt);
        let img = Image::from_fn(32, 32, |c, y, x| ((c + 2 * y + 3 * x) % 17) as f64 / 16.0).unwrap();
        assert_eq!(back.model.logits(&img).unwrap(), ckpt.model.logits(&img).unwrap());
    }

    #[test]
    fn probe_round_trip() {
        let ckpt = Checkpoint {
            model: LinearColorProbe::new(vec![0.5; 6], vec![1.0, -1.0]).unwrap().into(),
            meta: TrainingMeta::default(),
        };
        assert_eq!(Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap(), ckpt);
    }

    #[test]
    fn wrong_architecture_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&sample(), &path).unwrap();
        assert!(load_checkpoint(&path, Some("linear_color_probe")).is_err());

        let text = String::from_utf8_lossy(&sample().to_bytes()).replace("arch tiny_cnn", "arch resnet");
        let err = Checkpoint::from_bytes(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    #[test]
    fn empty_and_corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.ckpt");
        fs::write(&path, b"").unwrap();
        assert!(load_checkpoint(&path, None).is_err());

        let mut bytes = sample().to_bytes();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        bytes.truncate(last);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
