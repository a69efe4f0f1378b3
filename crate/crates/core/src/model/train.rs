use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Checkpoint, Classifier, Model, Trainable, TrainingMeta};
use crate::error::{Error, Result};
use crate::image::{Dataset, LabeledImage};

/// Minibatch SGD with momentum and L2 weight decay. Defaults are batch 128,
/// 30 epochs, learning rate 0.1, momentum 0.9, weight decay 2^-4, constant
/// schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 30,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0625,
            seed: 0,
        }
    }
}

impl SgdConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidParam(
                "batch size and epoch count must be positive".into(),
            ));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::InvalidParam(format!(
                "bad optimizer settings: lr {}, momentum {}, weight decay {}",
                self.learning_rate, self.momentum, self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub clean_val_accuracy: f64,
    pub robust_val_accuracy: Option<f64>,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    /// Parameters from the epoch with the best clean validation accuracy.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochMetrics>,
}

/// Replaces a minibatch before the gradient step (e.g. with adversarial
/// counterparts). Receives the current model and a per-batch seed.
pub type BatchTransform<'a> =
    dyn Fn(&Model, &[LabeledImage], u64) -> Result<Vec<LabeledImage>> + Sync + 'a;

/// Called after each epoch to measure an extra validation metric.
pub type EpochProbe<'a> = dyn Fn(&Model) -> Result<f64> + Sync + 'a;

/// Per-batch gradients are summed over this many fixed slices, so the result
/// does not depend on the worker count.
const GRAD_SLICES: usize = 8;

pub fn train(model: Model, train_set: &Dataset, val_set: &Dataset, hyper: &SgdConfig) -> Result<TrainRun> {
    train_with(model, train_set, val_set, hyper, None, None)
}

/// Training loop shared by standard and adversarial training.
pub fn train_with(
    mut model: Model,
    train_set: &Dataset,
    val_set: &Dataset,
    hyper: &SgdConfig,
    transform: Option<&BatchTransform<'_>>,
    robust_probe: Option<&EpochProbe<'_>>,
) -> Result<TrainRun> {
    hyper.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training split".into()));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyDataset("validation split".into()));
    }
    if let Some(item) = train_set.items().first() {
        model.check_input(&item.image)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut velocity = vec![0.0f32; model.params().len()];
    let (lr, mu, wd) = (
        hyper.learning_rate as f32,
        hyper.momentum as f32,
        hyper.weight_decay as f32,
    );

    let mut history = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(f64, usize, Vec<f32>)> = None;
    let mut batch_counter = 0u64;
    for epoch in 1..=hyper.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<LabeledImage> = chunk.iter().map(|&i| train_set.items()[i].clone()).collect();
            let batch_seed = hyper.seed ^ batch_counter.wrapping_mul(0x9E37_79B9_7F4A_7C15);
            batch_counter += 1;
            let batch = match transform {
                Some(t) => t(&model, &batch, batch_seed)?,
                None => batch,
            };
            let (batch_loss, mut grad) = batch_gradient(&model, &batch)?;
            loss_sum += batch_loss;
            let scale = 1.0 / batch.len() as f32;
            for g in &mut grad {
                *g *= scale;
            }
            let params = model.params_mut();
            for ((w, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = mu * *v + g + wd * *w;
                *w -= lr * *v;
            }
        }
        let clean = evaluate_accuracy(&model, val_set)?;
        let robust = robust_probe.map(|p| p(&model)).transpose()?;
        history.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            clean_val_accuracy: clean,
            robust_val_accuracy: robust,
            elapsed_secs: started.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|(acc, _, _)| clean > *acc) {
            best = Some((clean, epoch, model.params().to_vec()));
        }
    }

    let (val_accuracy, best_epoch, params) = best.expect("at least one epoch");
    model.params_mut().copy_from_slice(&params);
    Ok(TrainRun {
        checkpoint: Checkpoint {
            model,
            meta: TrainingMeta {
                epochs: hyper.epochs,
                seed: hyper.seed,
                val_accuracy,
                best_epoch,
                extra: Default::default(),
            },
        },
        history,
    })
}

/// Summed cross-entropy and summed parameter gradient over `batch`.
fn batch_gradient(model: &Model, batch: &[LabeledImage]) -> Result<(f64, Vec<f32>)> {
    let n_params = model.params().len();
    let slice_len = batch.len().div_ceil(GRAD_SLICES).max(1);
    let partials: Vec<(f64, Vec<f32>)> = batch
        .par_chunks(slice_len)
        .map(|slice| {
            let mut grad = vec![0.0f32; n_params];
            let mut loss = 0.0;
            for item in slice {
                loss += model.accumulate_param_gradient(&item.image, item.label, &mut grad)?;
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0f32; n_params];
    let mut loss = 0.0;
    for (l, g) in partials {
        loss += l;
        for (t, v) in total.iter_mut().zip(&g) {
            *t += v;
        }
    }
    Ok((loss, total))
}

/// Fraction of `data` whose argmax prediction equals the label.
pub fn evaluate_accuracy<M: Classifier + ?Sized>(model: &M, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset(format!("{} split", data.split())));
    }
    let correct = data
        .items()
        .par_iter()
        .map(|item| Ok(usize::from(model.predict(&item.image)? == item.label)))
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / data.len() as f64)
}
