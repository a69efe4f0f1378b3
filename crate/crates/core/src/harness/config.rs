//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comments start with '#'
//! seed = 7
//! attack.kind = advcf
//! attack.epsilon = 16
//! sweep.epsilons = 2, 8, 32
//! defense.list = grayscale, jpeg:30, median3
//! ```
//!
//! Keys are dotted names from a fixed vocabulary; unknown keys, duplicate
//! keys and malformed values are configuration errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::attacks::{AdvCfConfig, Attack, IfgsmConfig, RandomSearchConfig, StopPolicy};
use crate::defenses::Defense;
use crate::error::{Error, Result};
use crate::filter::presets;
use crate::losses::{LossSpec, DEFAULT_STYLE_LAMBDA};
use crate::model::SgdConfig;

/// Every key a configuration may set.
pub const KEYS: &[&str] = &[
    "seed",
    "data.dir",
    "data.split",
    "data.limit",
    "data.only_correct",
    "model.checkpoint",
    "model.init_seed",
    "attack.kind",
    "attack.iterations",
    "attack.step_size",
    "attack.pieces",
    "attack.epsilon",
    "attack.loss",
    "attack.kappa",
    "attack.lambda",
    "attack.style",
    "attack.quantize",
    "attack.stop",
    "attack.trials",
    "sweep.epsilons",
    "sweep.pieces",
    "sweep.random",
    "sweep.random_trials",
    "defense.list",
    "defense.jpeg.quality",
    "defense.intersect",
    "style.presets",
    "train.epochs",
    "train.batch_size",
    "train.learning_rate",
    "train.momentum",
    "train.weight_decay",
    "train.limit",
    "advtrain.robust_val_limit",
    "output.images",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl FromStr for Config {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut config = Config::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            let key = key.trim();
            if config.entries.contains_key(key) {
                return Err(config_err(format!("line {}: duplicate key {key:?}", n + 1)));
            }
            config.set(key, value.trim()).map_err(|e| match e {
                Error::Config(msg) => config_err(format!("line {}: {msg}", n + 1)),
                other => other,
            })?;
        }
        Ok(config)
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        fs::read_to_string(path).map_err(|e| Error::io(path, e))?.parse()
    }

    /// Sets or overrides one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(config_err(format!("unknown key {key:?}")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get_str(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| config_err(format!("bad value {v:?} for {key}")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list; `None` when the key is absent.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.get_str(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse()
                            .map_err(|_| config_err(format!("bad list item {s:?} in {key}")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// Renders back to the file format, one key per line in key order.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.get_or("seed", 0)
    }

    fn stop(&self, default: StopPolicy) -> Result<StopPolicy> {
        match self.get_str("attack.stop") {
            None => Ok(default),
            Some("first_hit") => Ok(StopPolicy::FirstHit),
            Some("last_iterate") => Ok(StopPolicy::LastIterate),
            Some("lowest_loss") => Ok(StopPolicy::LowestLoss),
            Some(other) => Err(config_err(format!("unknown stop policy {other:?}"))),
        }
    }

    fn loss(&self) -> Result<LossSpec> {
        let kappa = self.get_or("attack.kappa", 0.0)?;
        let loss = match self.get_str("attack.loss").unwrap_or("cw") {
            "cw" => LossSpec::Cw { kappa },
            "cross_entropy" => LossSpec::CrossEntropy,
            "style_cw" => LossSpec::StyleCw {
                kappa,
                lambda: self.get_or("attack.lambda", DEFAULT_STYLE_LAMBDA)?,
                preset: self.get_or("attack.style", "warm".to_string())?,
            },
            other => return Err(config_err(format!("unknown or non-classifier loss {other:?}"))),
        };
        loss.validate()?;
        Ok(loss)
    }

    /// The single attack described by the `attack.*` keys. `training`
    /// switches the defaults to the adversarial-training settings.
    pub fn attack(&self, training: bool) -> Result<Attack> {
        let kind = self.get_str("attack.kind").unwrap_or("advcf");
        let attack = match kind {
            "advcf" => {
                let d = if training {
                    AdvCfConfig::cifar_training()
                } else {
                    AdvCfConfig::comparison()
                };
                Attack::Advcf(AdvCfConfig {
                    iterations: self.get_or("attack.iterations", d.iterations)?,
                    step_size: self.get_or("attack.step_size", d.step_size)?,
                    pieces: self.get_or("attack.pieces", d.pieces)?,
                    epsilon: self.get_or("attack.epsilon", d.epsilon)?,
                    loss: self.loss()?,
                    quantize_output: self.get_or("attack.quantize", d.quantize_output)?,
                    stop: self.stop(d.stop)?,
                })
            }
            "ifgsm" => {
                let d = if training {
                    IfgsmConfig::cifar_training()
                } else {
                    IfgsmConfig::default()
                };
                Attack::Ifgsm(IfgsmConfig {
                    epsilon: self.get_or("attack.epsilon", d.epsilon)?,
                    step: self.get_or("attack.step_size", d.step)?,
                    iterations: self.get_or("attack.iterations", d.iterations)?,
                    quantize_output: self.get_or("attack.quantize", d.quantize_output)?,
                    stop: self.stop(d.stop)?,
                })
            }
            "random" => {
                let d = RandomSearchConfig::default();
                Attack::Random(RandomSearchConfig {
                    pieces: self.get_or("attack.pieces", d.pieces)?,
                    epsilon: self.get_or("attack.epsilon", d.epsilon)?,
                    trials: self.get_or("attack.trials", d.trials)?,
                    quantize_output: self.get_or("attack.quantize", d.quantize_output)?,
                })
            }
            other => return Err(config_err(format!("unknown attack {other:?}"))),
        };
        attack.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(attack)
    }

    /// The attack grid: the base attack alone, or one filter attack per
    /// `(sweep.epsilons x sweep.pieces)` cell, each followed by a random
    /// search at the same bound when `sweep.random` is on.
    pub fn attack_grid(&self) -> Result<Vec<Attack>> {
        let base = self.attack(false)?;
        let eps = self.list::<f64>("sweep.epsilons")?;
        let ks = self.list::<usize>("sweep.pieces")?;
        let with_random = self.get_or("sweep.random", false)?;
        if eps.is_none() && ks.is_none() && !with_random {
            return Ok(vec![base]);
        }
        let (base_eps, base_k) = base.bound();
        let eps = eps.unwrap_or_else(|| vec![base_eps]);
        let ks = ks.unwrap_or_else(|| vec![base_k.unwrap_or(64)]);
        let trials = self.get_or("sweep.random_trials", RandomSearchConfig::default().trials)?;
        let mut grid = Vec::new();
        for &epsilon in &eps {
            for &pieces in &ks {
                let cell = match &base {
                    Attack::Advcf(c) => Attack::Advcf(AdvCfConfig {
                        epsilon,
                        pieces,
                        ..c.clone()
                    }),
                    Attack::Random(c) => Attack::Random(RandomSearchConfig {
                        epsilon,
                        pieces,
                        ..c.clone()
                    }),
                    Attack::Ifgsm(c) => Attack::Ifgsm(IfgsmConfig { epsilon, ..c.clone() }),
                };
                cell.validate().map_err(|e| config_err(e.to_string()))?;
                grid.push(cell);
                if with_random && !matches!(base, Attack::Random(_)) {
                    grid.push(Attack::Random(RandomSearchConfig {
                        pieces,
                        epsilon,
                        trials,
                        quantize_output: true,
                    }));
                }
            }
        }
        Ok(grid)
    }

    /// `defense.list`, with bare `jpeg` taking `defense.jpeg.quality`.
    pub fn defenses(&self) -> Result<Vec<Defense>> {
        let quality = self.get::<u8>("defense.jpeg.quality")?;
        let names = self
            .list::<String>("defense.list")?
            .unwrap_or_else(|| ["grayscale", "jpeg", "median3", "resize_pad"].map(String::from).to_vec());
        names
            .iter()
            .map(|name| match (name.as_str(), quality) {
                ("jpeg", Some(q)) => format!("jpeg:{q}").parse(),
                _ => name.parse(),
            })
            .collect()
    }

    pub fn presets(&self) -> Result<Vec<String>> {
        let names = self
            .list::<String>("style.presets")?
            .unwrap_or_else(|| presets::NAMES.map(String::from).to_vec());
        for name in &names {
            presets::preset(name)?;
        }
        Ok(names)
    }

    pub fn sgd(&self) -> Result<SgdConfig> {
        let d = SgdConfig::default();
        Ok(SgdConfig {
            batch_size: self.get_or("train.batch_size", d.batch_size)?,
            epochs: self.get_or("train.epochs", d.epochs)?,
            learning_rate: self.get_or("train.learning_rate", d.learning_rate)?,
            momentum: self.get_or("train.momentum", d.momentum)?,
            weight_decay: self.get_or("train.weight_decay", d.weight_decay)?,
            seed: self.seed()?,
        })
    }
}
