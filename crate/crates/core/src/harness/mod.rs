//! Experiment orchestration: attack grids, defense survival, style runs and
//! their reports.

mod config;
mod report;

pub use config::{Config, KEYS};
pub use report::{
    emit_report, read_csv_report, read_json_report, recompute_aggregates, rows_path, Aggregate, ExperimentReport,
    ReportFormat, Row, SCHEMA_VERSION,
};

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;

use crate::attacks::{derive_seed, style_target, AdvCfConfig, Attack};
use crate::defenses::Defense;
use crate::error::{Error, Result};
use crate::filter::{apply_filter, presets};
use crate::image::{quantize, Dataset, Image};
use crate::losses::{LossSpec, DEFAULT_STYLE_LAMBDA};
use crate::model::{Classifier, TrainRun};

/// Settings shared by every evaluation.
#[derive(Debug, Clone, Default)]
pub struct EvalSettings {
    pub seed: u64,
    /// Evaluate at most this many images (after filtering).
    pub limit: Option<usize>,
    /// Keep only images the model classifies correctly before any attack.
    pub only_correct: bool,
    pub model_id: String,
    /// Configuration snapshot embedded in reports.
    pub config: BTreeMap<String, String>,
}

/// A produced adversarial image, kept for defenses and export.
#[derive(Debug, Clone)]
pub struct AdversarialExample {
    pub group: String,
    pub index: usize,
    pub label: usize,
    pub clean_prediction: usize,
    pub success: bool,
    pub image: Image,
}

#[derive(Debug, Clone)]
pub struct AttackRun {
    pub report: ExperimentReport,
    pub examples: Vec<AdversarialExample>,
}

impl AttackRun {
    /// Indices whose attack succeeded in every one of `groups`.
    pub fn common_successes(&self, groups: &[&str]) -> BTreeSet<usize> {
        let mut sets = groups.iter().map(|g| {
            self.examples
                .iter()
                .filter(|e| e.group == *g && e.success)
                .map(|e| e.index)
                .collect::<BTreeSet<_>>()
        });
        let first = sets.next().unwrap_or_default();
        sets.fold(first, |acc, s| acc.intersection(&s).copied().collect())
    }

    pub fn groups(&self) -> Vec<String> {
        self.report.aggregates.iter().map(|a| a.group.clone()).collect()
    }
}

/// Report label of an attack, e.g. `advcf eps=16 K=64`.
pub fn group_name(attack: &Attack) -> String {
    match attack {
        Attack::Advcf(c) => match &c.loss {
            LossSpec::StyleCw { preset, lambda, .. } => {
                format!("style_advcf:{preset} eps={} K={} lambda={lambda}", c.epsilon, c.pieces)
            }
            _ => format!("advcf eps={} K={}", c.epsilon, c.pieces),
        },
        Attack::Ifgsm(c) => format!("ifgsm eps={}", c.epsilon),
        Attack::Random(c) => format!("random eps={} K={} trials={}", c.epsilon, c.pieces, c.trials),
    }
}

fn predictions<M: Classifier + ?Sized>(model: &M, data: &Dataset) -> Result<Vec<usize>> {
    data.items().par_iter().map(|i| model.predict(&i.image)).collect()
}

/// Indices to evaluate, with the model's clean prediction for each.
pub fn select_images<M: Classifier + ?Sized>(
    model: &M,
    data: &Dataset,
    settings: &EvalSettings,
) -> Result<Vec<(usize, usize)>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset(format!("{} split", data.split())));
    }
    let preds = predictions(model, data)?;
    let picked: Vec<(usize, usize)> = preds
        .into_iter()
        .enumerate()
        .filter(|&(i, p)| !settings.only_correct || p == data.items()[i].label)
        .take(settings.limit.unwrap_or(usize::MAX))
        .collect();
    if picked.is_empty() {
        return Err(Error::EmptyDataset("no images left to evaluate".into()));
    }
    Ok(picked)
}

const ATTACK_NOTES: [&str; 2] = [
    "success_rate counts every evaluated image; success_rate_on_correct only those classified correctly beforehand",
    "filter attacks return the first successful iterate and judge success on the 8-bit image",
];

/// Runs every attack in `attacks` on the selected images.
pub fn run_attack_eval<M: Classifier + ?Sized>(
    model: &M,
    data: &Dataset,
    attacks: &[Attack],
    settings: &EvalSettings,
) -> Result<AttackRun> {
    if attacks.is_empty() {
        return Err(Error::Config("no attack configured".into()));
    }
    for a in attacks {
        a.validate()?;
    }
    let selected = select_images(model, data, settings)?;
    let mut rows = Vec::new();
    let mut examples = Vec::new();
    for attack in attacks {
        let group = group_name(attack);
        let results = selected
            .par_iter()
            .map(|&(index, clean)| {
                let item = &data.items()[index];
                let started = Instant::now();
                let out = attack.run(model, &item.image, item.label, derive_seed(settings.seed, index))?;
                let row = Row {
                    group: group.clone(),
                    index,
                    label: item.label,
                    clean_prediction: clean,
                    prediction: out.prediction,
                    success: out.success,
                    iterations: out.iterations_used,
                    first_success: out.first_success_iteration,
                    l2_to_target: None,
                    wall_secs: started.elapsed().as_secs_f64(),
                };
                let example = AdversarialExample {
                    group: group.clone(),
                    index,
                    label: item.label,
                    clean_prediction: clean,
                    success: out.success,
                    image: out.adversarial,
                };
                Ok((row, example))
            })
            .collect::<Result<Vec<_>>>()?;
        for (row, example) in results {
            rows.push(row);
            examples.push(example);
        }
    }
    let mut report = ExperimentReport::new("attack", settings.seed, &settings.model_id, settings.config.clone());
    report.notes = ATTACK_NOTES.map(String::from).to_vec();
    report.set_rows(rows);
    Ok(AttackRun { report, examples })
}

/// Survival of previously successful adversarial images under each defense.
/// With `restrict`, only those indices are used. Row groups read
/// `<attack group> | <defense>`.
pub fn run_defense_eval<M: Classifier + ?Sized>(
    model: &M,
    run: &AttackRun,
    defenses: &[Defense],
    restrict: Option<&BTreeSet<usize>>,
    settings: &EvalSettings,
) -> Result<ExperimentReport> {
    let mut rows = Vec::new();
    for group in run.groups() {
        let pool: Vec<&AdversarialExample> = run
            .examples
            .iter()
            .filter(|e| e.group == group && e.success && restrict.is_none_or(|r| r.contains(&e.index)))
            .collect();
        for defense in defenses {
            let name = format!("{group} | {defense}");
            let part = pool
                .par_iter()
                .map(|e| {
                    let started = Instant::now();
                    let transformed = defense.apply(&e.image, derive_seed(settings.seed, e.index))?;
                    let prediction = model.predict(&transformed)?;
                    Ok(Row {
                        group: name.clone(),
                        index: e.index,
                        label: e.label,
                        clean_prediction: e.clean_prediction,
                        prediction,
                        success: prediction != e.label,
                        iterations: 0,
                        first_success: None,
                        l2_to_target: None,
                        wall_secs: started.elapsed().as_secs_f64(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.extend(part);
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset("no successful adversarial images to defend".into()));
    }
    let mut report = ExperimentReport::new("defense", settings.seed, &settings.model_id, settings.config.clone());
    report.notes = vec![
        "success_rate is the survival rate: adversarial images still misclassified after the defense".into(),
        "resize_pad: bilinear resize with half-pixel centers, zero padding".into(),
        "median3: mirrored borders with the edge pixel repeated".into(),
    ];
    report.set_rows(rows);
    Ok(report)
}

/// Style presets alone versus plain and style-guided AdvCF.
///
/// Groups: `clean`; per preset `preset:<name>` (filtered by the preset
/// only), `style_advcf:<name>` and `advcf:<name>` (the plain attack's output
/// measured against the same style target). `base` supplies the iteration
/// budget, bounds, stop policy and the margin/style weights (a plain margin
/// loss uses the default style weight).
pub fn run_style_eval<M: Classifier + ?Sized>(
    model: &M,
    data: &Dataset,
    preset_names: &[String],
    base: &AdvCfConfig,
    settings: &EvalSettings,
) -> Result<AttackRun> {
    let (kappa, lambda) = match base.loss {
        LossSpec::StyleCw { kappa, lambda, .. } => (kappa, lambda),
        LossSpec::Cw { kappa } => (kappa, DEFAULT_STYLE_LAMBDA),
        ref other => {
            return Err(Error::Config(format!(
                "style evaluation needs a margin loss, got {}",
                other.name()
            )))
        }
    };
    let filters = preset_names
        .iter()
        .map(|n| presets::preset(n))
        .collect::<Result<Vec<_>>>()?;
    let selected = select_images(model, data, settings)?;
    let plain_cfg = AdvCfConfig {
        loss: LossSpec::Cw { kappa },
        ..base.clone()
    };

    let mut rows = Vec::new();
    let mut examples = Vec::new();
    for &(index, clean) in &selected {
        let label = data.items()[index].label;
        rows.push(Row {
            group: "clean".into(),
            index,
            label,
            clean_prediction: clean,
            prediction: clean,
            success: clean != label,
            iterations: 0,
            first_success: None,
            l2_to_target: None,
            wall_secs: 0.0,
        });
    }
    let plain = selected
        .par_iter()
        .map(|&(index, _)| {
            let item = &data.items()[index];
            let started = Instant::now();
            let out = Attack::Advcf(plain_cfg.clone()).run(model, &item.image, item.label, 0)?;
            Ok((out, started.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>>>()?;

    for (name, filter) in preset_names.iter().zip(&filters) {
        let style_cfg = AdvCfConfig {
            loss: LossSpec::StyleCw {
                kappa,
                lambda,
                preset: name.clone(),
            },
            ..base.clone()
        };
        let per_image = selected
            .par_iter()
            .zip(&plain)
            .map(|(&(index, clean), (plain_out, plain_secs))| {
                let item = &data.items()[index];
                let target = style_target(&item.image, name)?;
                let filtered = quantize(&apply_filter(&item.image, filter)?);
                let filtered_pred = model.predict(&filtered)?;
                let started = Instant::now();
                let out = Attack::Advcf(style_cfg.clone()).run(model, &item.image, item.label, 0)?;
                let secs = started.elapsed().as_secs_f64();
                let base_row = Row {
                    group: String::new(),
                    index,
                    label: item.label,
                    clean_prediction: clean,
                    prediction: 0,
                    success: false,
                    iterations: 0,
                    first_success: None,
                    l2_to_target: None,
                    wall_secs: 0.0,
                };
                let preset_row = Row {
                    group: format!("preset:{name}"),
                    prediction: filtered_pred,
                    success: filtered_pred != item.label,
                    ..base_row.clone()
                };
                let style_row = Row {
                    group: format!("style_advcf:{name}"),
                    prediction: out.prediction,
                    success: out.success,
                    iterations: out.iterations_used,
                    first_success: out.first_success_iteration,
                    l2_to_target: Some(out.adversarial.squared_l2_distance(&target).sqrt()),
                    wall_secs: secs,
                    ..base_row.clone()
                };
                let plain_row = Row {
                    group: format!("advcf:{name}"),
                    prediction: plain_out.prediction,
                    success: plain_out.success,
                    iterations: plain_out.iterations_used,
                    first_success: plain_out.first_success_iteration,
                    l2_to_target: Some(plain_out.adversarial.squared_l2_distance(&target).sqrt()),
                    wall_secs: *plain_secs,
                    ..base_row
                };
                let example = AdversarialExample {
                    group: style_row.group.clone(),
                    index,
                    label: item.label,
                    clean_prediction: clean,
                    success: out.success,
                    image: out.adversarial,
                };
                Ok(([preset_row, style_row, plain_row], example))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut by_kind: [Vec<Row>; 3] = Default::default();
        for (three, example) in per_image {
            for (bucket, row) in by_kind.iter_mut().zip(three) {
                bucket.push(row);
            }
            examples.push(example);
        }
        rows.extend(by_kind.into_iter().flatten());
    }
    let mut report = ExperimentReport::new("style", settings.seed, &settings.model_id, settings.config.clone());
    report.notes = vec![
        "l2_to_target is the Euclidean distance between the attack output and the preset-filtered image".into(),
        "for clean and preset rows, success means the image is misclassified".into(),
    ];
    report.set_rows(rows);
    Ok(AttackRun { report, examples })
}

/// Report for a training run: the epoch log plus the selected epoch.
pub fn training_report(kind: &str, run: &TrainRun, settings: &EvalSettings) -> ExperimentReport {
    let mut report = ExperimentReport::new(kind, settings.seed, &settings.model_id, settings.config.clone());
    let meta = &run.checkpoint.meta;
    report.notes = vec![
        format!(
            "selected epoch {} with clean validation accuracy {}",
            meta.best_epoch, meta.val_accuracy
        ),
        "checkpoint selection uses clean validation accuracy only".into(),
    ];
    report.epochs = run.history.clone();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{IfgsmConfig, RandomSearchConfig};
    use crate::image::{LabeledImage, Split};
    use crate::model::LinearColorProbe;
    use crate::synthetic::synthetic_dataset;

    fn probe() -> LinearColorProbe {
        LinearColorProbe::new(vec![6.0, 0.0, -6.0, -6.0, 0.0, 6.0], vec![0.0, 0.0]).unwrap()
    }

    fn data(len: usize) -> Dataset {
        let d = synthetic_dataset(len, 8, 11, Split::Test).unwrap();
        let items = d
            .items()
            .iter()
            .map(|i| LabeledImage {
                image: i.image.clone(),
                label: i.label % 2,
            })
            .collect();
        Dataset::new(items, 2, Split::Test).unwrap()
    }

    fn fast_advcf() -> AdvCfConfig {
        AdvCfConfig {
            iterations: 15,
            pieces: 8,
            ..AdvCfConfig::comparison()
        }
    }

    #[test]
    fn attack_eval_is_consistent_and_reproducible() {
        let model = probe();
        let d = data(16);
        let attacks = [
            Attack::Advcf(fast_advcf()),
            Attack::Random(RandomSearchConfig {
                pieces: 8,
                trials: 5,
                ..Default::default()
            }),
        ];
        let settings = EvalSettings {
            seed: 4,
            ..Default::default()
        };
        let a = run_attack_eval(&model, &d, &attacks, &settings).unwrap();
        let b = run_attack_eval(&model, &d, &attacks, &settings).unwrap();
        assert_eq!(a.report.without_timing(), b.report.without_timing());
        assert!(a.report.aggregates_are_consistent());
        assert_eq!(a.report.aggregates.len(), 2);
        assert_eq!(a.examples.len(), 32);
    }

    #[test]
    fn empty_and_filtered_selection() {
        let model = probe();
        let empty = Dataset::new(Vec::new(), 2, Split::Test).unwrap();
        let settings = EvalSettings::default();
        assert!(run_attack_eval(&model, &empty, &[Attack::Advcf(fast_advcf())], &settings).is_err());
        let d = data(20);
        let only = EvalSettings {
            only_correct: true,
            limit: Some(3),
            ..Default::default()
        };
        let picked = select_images(&model, &d, &only).unwrap();
        assert!(picked.len() <= 3);
        assert!(picked.iter().all(|&(i, p)| d.items()[i].label == p));
    }

    #[test]
    fn identity_defense_keeps_everything() {
        let model = probe();
        let d = data(16);
        let settings = EvalSettings::default();
        let run = run_attack_eval(&model, &d, &[Attack::Ifgsm(IfgsmConfig::default())], &settings).unwrap();
        let report = run_defense_eval(&model, &run, &[Defense::Identity], None, &settings).unwrap();
        let agg = &report.aggregates[0];
        assert!(agg.attempts > 0);
        assert_eq!(agg.success_rate, 1.0);
        let none = BTreeSet::new();
        assert!(run_defense_eval(&model, &run, &[Defense::Identity], Some(&none), &settings).is_err());
    }

    #[test]
    fn zero_style_weight_matches_plain_attack() {
        let model = probe();
        let d = data(12);
        let base = AdvCfConfig {
            loss: LossSpec::StyleCw {
                kappa: 0.0,
                lambda: 0.0,
                preset: "warm".into(),
            },
            ..fast_advcf()
        };
        let run = run_style_eval(&model, &d, &["warm".into()], &base, &EvalSettings::default()).unwrap();
        let style = run.report.aggregate("style_advcf:warm").unwrap();
        let plain = run.report.aggregate("advcf:warm").unwrap();
        assert_eq!(style.successes, plain.successes);
        assert_eq!(style.mean_iterations, plain.mean_iterations);
        assert!(run_style_eval(&model, &d, &["sepia".into()], &base, &EvalSettings::default()).is_err());
    }
}
