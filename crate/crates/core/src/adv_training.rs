//! Adversarial training and robustness measurements.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{derive_seed, AdvCfConfig, Attack};
use crate::error::{Error, Result};
use crate::image::{Dataset, LabeledImage};
use crate::model::{train_with, Classifier, EpochProbe, Model, SgdConfig, TrainRun};

/// Trains on batches made entirely of adversarial examples, regenerated for
/// every batch against the current parameters. Keeps the epoch with the best
/// clean validation accuracy.
///
/// With `robust_val` set, each epoch also logs robust accuracy on that
/// split; it is never used for checkpoint selection.
pub fn adversarial_train(
    model: Model,
    train_set: &Dataset,
    val_set: &Dataset,
    attack: &Attack,
    hyper: &SgdConfig,
    robust_val: Option<(&Dataset, &Attack)>,
) -> Result<TrainRun> {
    if matches!(attack, Attack::Random(_)) {
        return Err(Error::Config(
            "adversarial training needs an advcf or ifgsm attack".into(),
        ));
    }
    attack.validate()?;
    let transform = |model: &Model, batch: &[LabeledImage], seed: u64| -> Result<Vec<LabeledImage>> {
        batch
            .par_iter()
            .enumerate()
            .map(|(i, item)| {
                let out = attack.run(model, &item.image, item.label, derive_seed(seed, i))?;
                Ok(LabeledImage {
                    image: out.adversarial,
                    label: item.label,
                })
            })
            .collect()
    };
    let probe = robust_val.map(|(data, attack)| {
        move |model: &Model| robust_accuracy(model, data, attack, hyper.seed)
    });
    let probe_ref: Option<&EpochProbe<'_>> = probe.as_ref().map(|p| p as &EpochProbe<'_>);
    let mut run = train_with(model, train_set, val_set, hyper, Some(&transform), probe_ref)?;
    let extra = &mut run.checkpoint.meta.extra;
    extra.insert("attack".into(), serde_json::to_string(attack)?);
    Ok(run)
}

/// Fraction of `data` that the model classifies correctly and the attack
/// fails to flip. Images the model already gets wrong count as broken, so
/// the result never exceeds clean accuracy.
pub fn robust_accuracy<M: Classifier + ?Sized>(model: &M, data: &Dataset, attack: &Attack, seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset(format!("{} split", data.split())));
    }
    attack.validate()?;
    let held = data
        .items()
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            if model.predict(&item.image)? != item.label {
                return Ok(0usize);
            }
            let out = attack.run(model, &item.image, item.label, derive_seed(seed, i))?;
            Ok(usize::from(!out.success))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(held.iter().sum::<usize>() as f64 / data.len() as f64)
}

/// Robust accuracy under AdvCF for every `(epsilon, K)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub epsilons: Vec<f64>,
    pub pieces: Vec<usize>,
    /// `accuracy[i][j]` is for `epsilons[i]` and `pieces[j]`.
    pub accuracy: Vec<Vec<f64>>,
}

pub fn epsilon_k_sweep<M: Classifier + ?Sized>(
    model: &M,
    data: &Dataset,
    base: &AdvCfConfig,
    epsilons: &[f64],
    pieces: &[usize],
    seed: u64,
) -> Result<SweepGrid> {
    if epsilons.is_empty() || pieces.is_empty() {
        return Err(Error::InvalidParam("sweep needs at least one epsilon and one K".into()));
    }
    let accuracy = epsilons
        .iter()
        .map(|&epsilon| {
            pieces
                .iter()
                .map(|&k| {
                    let attack = Attack::Advcf(AdvCfConfig {
                        epsilon,
                        pieces: k,
                        ..base.clone()
                    });
                    robust_accuracy(model, data, &attack, seed)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(SweepGrid {
        epsilons: epsilons.to_vec(),
        pieces: pieces.to_vec(),
        accuracy,
    })
}
