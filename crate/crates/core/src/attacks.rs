//! Adversarial attacks: gradient-based color-filter search (plain and
//! style-guided), uniform random filter search, and the I-FGSM pixel baseline.
//!
//! Filter attacks never touch pixels directly: every candidate they produce
//! is exactly `apply_filter(original, params)` for some in-bound `params`.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{apply_filter, filter_param_gradient, presets, sample_params_uniform, FilterParams};
use crate::image::{quantize, quantize_value, Image};
use crate::losses::{self, LogitLoss, LossSpec};
use crate::model::Classifier;

/// Gradient norms below this are treated as zero and the step is skipped.
pub const MIN_GRAD_NORM: f64 = 1e-12;

/// Independent per-item seed derived from a base seed (SplitMix64 finalizer).
pub fn derive_seed(base: u64, index: usize) -> u64 {
    let mut z = base.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Which iterate an iterative attack hands back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopPolicy {
    /// Stop at and return the first iterate that reaches the goal.
    #[default]
    FirstHit,
    /// Spend the whole budget and return the last iterate.
    LastIterate,
    /// Spend the whole budget and return the goal-reaching iterate with the
    /// lowest objective, or the last iterate if none reached the goal. Only
    /// filter searches support it.
    LowestLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvCfConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub pieces: usize,
    pub epsilon: f64,
    pub loss: LossSpec,
    /// Judge success on the 8-bit image rather than the continuous one.
    pub quantize_output: bool,
    pub stop: StopPolicy,
}

impl AdvCfConfig {
    /// 100 iterations, step 1, K = 64, epsilon = 16.
    pub fn comparison() -> Self {
        Self {
            iterations: 100,
            step_size: 1.0,
            pieces: 64,
            epsilon: 16.0,
            loss: LossSpec::default(),
            quantize_output: true,
            stop: StopPolicy::FirstHit,
        }
    }

    /// 50 iterations, step 0.1, K = 64, epsilon = 8; spends the full budget.
    pub fn cifar_training() -> Self {
        Self {
            iterations: 50,
            step_size: 0.1,
            pieces: 64,
            epsilon: 8.0,
            loss: LossSpec::default(),
            quantize_output: true,
            stop: StopPolicy::LastIterate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParam("attack needs at least one iteration".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParam(format!("step size {} must be positive", self.step_size)));
        }
        FilterParams::identity(self.pieces, self.epsilon)?;
        self.loss.validate()
    }

    fn search(&self) -> FilterSearch {
        FilterSearch {
            iterations: self.iterations,
            step_size: self.step_size,
            pieces: self.pieces,
            epsilon: self.epsilon,
            quantize_output: self.quantize_output,
            stop: self.stop,
        }
    }
}

impl Default for AdvCfConfig {
    fn default() -> Self {
        Self::comparison()
    }
}

/// L-infinity sign-gradient attack; `epsilon` and `step` are in 0-255 pixel units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfgsmConfig {
    pub epsilon: f64,
    pub step: f64,
    pub iterations: usize,
    pub quantize_output: bool,
    pub stop: StopPolicy,
}

impl IfgsmConfig {
    /// 7 iterations of step 2 inside an epsilon = 8 ball, full budget.
    pub fn cifar_training() -> Self {
        Self {
            epsilon: 8.0,
            step: 2.0,
            iterations: 7,
            quantize_output: true,
            stop: StopPolicy::LastIterate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.step >= 0.0) || self.iterations == 0 {
            return Err(Error::InvalidParam(format!(
                "bad I-FGSM settings: epsilon {}, step {}, iterations {}",
                self.epsilon, self.step, self.iterations
            )));
        }
        if self.stop == StopPolicy::LowestLoss {
            return Err(Error::InvalidParam("I-FGSM supports first_hit and last_iterate only".into()));
        }
        Ok(())
    }
}

impl Default for IfgsmConfig {
    fn default() -> Self {
        Self {
            stop: StopPolicy::FirstHit,
            iterations: 10,
            ..Self::cifar_training()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSearchConfig {
    pub pieces: usize,
    pub epsilon: f64,
    pub trials: usize,
    pub quantize_output: bool,
}

impl RandomSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParam("random search needs at least one trial".into()));
        }
        FilterParams::identity(self.pieces, self.epsilon).map(|_| ())
    }
}

impl Default for RandomSearchConfig {
    fn default() -> Self {
        Self {
            pieces: 64,
            epsilon: 16.0,
            trials: 1000,
            quantize_output: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    /// The returned image (8-bit realizable when quantization is on).
    pub adversarial: Image,
    /// Recomputed from a fresh forward pass on `adversarial`.
    pub success: bool,
    pub prediction: usize,
    pub first_success_iteration: Option<usize>,
    pub iterations_used: usize,
    pub final_params: Option<FilterParams>,
    pub loss_trace: Vec<f64>,
    /// Iterations whose gradient norm fell below [`MIN_GRAD_NORM`].
    pub skipped_steps: usize,
    pub elapsed: Duration,
}

/// What a filter search optimizes, seen through the candidate image.
pub trait FilterObjective {
    /// Loss at `candidate` and its gradient with respect to the candidate's
    /// pixels.
    fn loss_and_gradient(&self, candidate: &Image) -> Result<(f64, Vec<f64>)>;

    fn goal_reached(&self, candidate: &Image) -> Result<bool>;
}

/// Settings of the projected, normalized-gradient descent over filter weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSearch {
    pub iterations: usize,
    pub step_size: f64,
    pub pieces: usize,
    pub epsilon: f64,
    pub quantize_output: bool,
    pub stop: StopPolicy,
}

#[derive(Debug, Clone)]
pub struct FilterTrajectory {
    pub params: FilterParams,
    /// `apply_filter(original, params)`, quantized when requested.
    pub image: Image,
    pub goal_reached: bool,
    pub first_success_iteration: Option<usize>,
    pub iterations_used: usize,
    pub loss_trace: Vec<f64>,
    pub skipped_steps: usize,
}

/// Descends on filter weights from the identity curve:
/// `theta <- clip(theta - step * g / ||g||, 1/K, epsilon/K)` with `g` the
/// gradient over all `3K` weights, re-filtering the original after each step.
///
/// A vanishing gradient means the weights, and therefore every later
/// iteration, would stay the same, so the search stops there.
pub fn optimize_filter(
    objective: &dyn FilterObjective,
    original: &Image,
    search: &FilterSearch,
) -> Result<FilterTrajectory> {
    let realize = |img: Image| if search.quantize_output { quantize(&img) } else { img };
    let mut params = FilterParams::identity(search.pieces, search.epsilon)?;
    let mut current = apply_filter(original, &params)?;
    let mut first_success = objective
        .goal_reached(&realize(current.clone()))?
        .then_some(0);
    let mut loss_trace = Vec::with_capacity(search.iterations);
    let mut skipped = 0;
    let mut used = 0;

    let mut hit = first_success.is_some();
    // (loss, params, iterate) of the best goal-reaching iterate seen so far
    let mut best: Option<(f64, FilterParams, Image)> = None;
    let mut consider = |loss: f64, hit: bool, params: &FilterParams, current: &Image| {
        if hit && best.as_ref().is_none_or(|b| loss < b.0) {
            best = Some((loss, params.clone(), current.clone()));
        }
    };
    let mut pending = true;
    if first_success.is_none() || search.stop != StopPolicy::FirstHit {
        for t in 1..=search.iterations {
            let (loss, pixel_grad) = objective.loss_and_gradient(&current)?;
            consider(loss, hit, &params, &current);
            loss_trace.push(loss);
            used = t;
            let grad = filter_param_gradient(original, &params, &pixel_grad)?;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm.is_nan() || norm < MIN_GRAD_NORM {
                skipped += 1;
                pending = false;
                break;
            }
            if !norm.is_finite() {
                return Err(Error::InvalidParam(format!("non-finite gradient at iteration {t}")));
            }
            params = params.step_and_clip(&grad, search.step_size / norm);
            current = apply_filter(original, &params)?;
            hit = objective.goal_reached(&realize(current.clone()))?;
            if hit {
                first_success.get_or_insert(t);
                if search.stop == StopPolicy::FirstHit {
                    break;
                }
            }
        }
    }
    if search.stop == StopPolicy::LowestLoss {
        if pending && hit {
            let (loss, _) = objective.loss_and_gradient(&current)?;
            consider(loss, hit, &params, &current);
        }
        if let Some((_, p, img)) = best {
            params = p;
            current = img;
        }
    }

    let image = realize(current);
    Ok(FilterTrajectory {
        goal_reached: objective.goal_reached(&image)?,
        params,
        image,
        first_success_iteration: first_success,
        iterations_used: used,
        loss_trace,
        skipped_steps: skipped,
    })
}

/// Untargeted misclassification objective on a classifier, optionally with
/// an L2 pull toward a style target.
pub struct ClassifierObjective<'a, M: Classifier + ?Sized> {
    pub model: &'a M,
    pub label: usize,
    pub loss: LogitLoss,
    /// `(lambda, target)` for the style term `lambda * ||x' - target||^2`.
    pub style: Option<(f64, &'a Image)>,
}

impl<M: Classifier + ?Sized> FilterObjective for ClassifierObjective<'_, M> {
    fn loss_and_gradient(&self, candidate: &Image) -> Result<(f64, Vec<f64>)> {
        let ig = self
            .model
            .input_gradient_with(candidate, &|z| self.loss.evaluate(z, self.label))?;
        let mut loss = ig.loss;
        let mut grad = ig.grad;
        if let Some((lambda, target)) = self.style {
            let (term, pixel) = losses::style_term(candidate, target, lambda);
            loss += term;
            for (g, p) in grad.iter_mut().zip(pixel) {
                *g += p;
            }
        }
        Ok((loss, grad))
    }

    fn goal_reached(&self, candidate: &Image) -> Result<bool> {
        Ok(self.model.predict(candidate)? != self.label)
    }
}

/// Drives a scalar score below a threshold with the `max(score, T)` loss.
/// `score` returns the score and its gradient with respect to the pixels.
pub struct ScoreThresholdObjective<F> {
    pub score: F,
    pub threshold: f64,
}

impl<F> FilterObjective for ScoreThresholdObjective<F>
where
    F: Fn(&Image) -> Result<(f64, Vec<f64>)>,
{
    fn loss_and_gradient(&self, candidate: &Image) -> Result<(f64, Vec<f64>)> {
        let (s, grad) = (self.score)(candidate)?;
        let (loss, dscore) = losses::threshold_loss(s, self.threshold);
        Ok((loss, grad.into_iter().map(|g| g * dscore).collect()))
    }

    fn goal_reached(&self, candidate: &Image) -> Result<bool> {
        Ok(losses::threshold_reached((self.score)(candidate)?.0, self.threshold))
    }
}

fn check_label<M: Classifier + ?Sized>(model: &M, image: &Image, label: usize) -> Result<()> {
    model.check_input(image)?;
    if label >= model.class_count() {
        return Err(Error::InvalidParam(format!(
            "label {label} out of range for {} classes",
            model.class_count()
        )));
    }
    Ok(())
}

fn finish<M: Classifier + ?Sized>(
    model: &M,
    label: usize,
    trajectory: FilterTrajectory,
    started: Instant,
) -> Result<AttackOutcome> {
    let prediction = model.predict(&trajectory.image)?;
    Ok(AttackOutcome {
        success: prediction != label,
        prediction,
        adversarial: trajectory.image,
        first_success_iteration: trajectory.first_success_iteration,
        iterations_used: trajectory.iterations_used,
        final_params: Some(trajectory.params),
        loss_trace: trajectory.loss_trace,
        skipped_steps: trajectory.skipped_steps,
        elapsed: started.elapsed(),
    })
}

/// Gradient-based adversarial color filter. A style-guided loss in the
/// config is resolved to its preset target and forwarded to
/// [`style_guided_advcf`].
pub fn advcf_attack<M: Classifier + ?Sized>(
    model: &M,
    image: &Image,
    label: usize,
    config: &AdvCfConfig,
) -> Result<AttackOutcome> {
    config.validate()?;
    check_label(model, image, label)?;
    let loss = match &config.loss {
        LossSpec::StyleCw { preset, .. } => {
            let target = style_target(image, preset)?;
            return style_guided_advcf(model, image, label, config, &target);
        }
        spec => spec.logit_loss().ok_or_else(|| {
            Error::Config(format!(
                "loss {} does not apply to a classifier's logits",
                spec.name()
            ))
        })?,
    };
    let started = Instant::now();
    let objective = ClassifierObjective {
        model,
        label,
        loss,
        style: None,
    };
    let trajectory = optimize_filter(&objective, image, &config.search())?;
    finish(model, label, trajectory, started)
}

/// AdvCF with the objective `L_margin + lambda * ||x' - style_target||^2`.
/// The search still starts from the identity filter on the original image.
pub fn style_guided_advcf<M: Classifier + ?Sized>(
    model: &M,
    image: &Image,
    label: usize,
    config: &AdvCfConfig,
    style_target: &Image,
) -> Result<AttackOutcome> {
    config.validate()?;
    check_label(model, image, label)?;
    let LossSpec::StyleCw { kappa, lambda, .. } = config.loss else {
        return Err(Error::Config(format!(
            "style-guided attack needs the style_cw loss, got {}",
            config.loss.name()
        )));
    };
    if !image.same_shape(style_target) {
        return Err(Error::shape(
            format!("{:?}", image.dims()),
            format!("{:?}", style_target.dims()),
        ));
    }
    let started = Instant::now();
    let objective = ClassifierObjective {
        model,
        label,
        loss: LogitLoss::Cw { kappa },
        style: Some((lambda, style_target)),
    };
    let trajectory = optimize_filter(&objective, image, &config.search())?;
    finish(model, label, trajectory, started)
}

/// The image a style preset turns `image` into.
pub fn style_target(image: &Image, preset: &str) -> Result<Image> {
    apply_filter(image, &presets::preset(preset)?)
}

/// Samples `trials` filters uniformly within the bound and returns the first
/// one that fools the model, or the last sample on failure.
pub fn random_filter_search<M: Classifier + ?Sized, R: Rng + ?Sized>(
    model: &M,
    image: &Image,
    label: usize,
    config: &RandomSearchConfig,
    rng: &mut R,
) -> Result<AttackOutcome> {
    config.validate()?;
    check_label(model, image, label)?;
    let started = Instant::now();
    let mut last = None;
    let mut first_success = None;
    for trial in 1..=config.trials {
        let params = sample_params_uniform(config.pieces, config.epsilon, rng)?;
        let mut candidate = apply_filter(image, &params)?;
        if config.quantize_output {
            candidate = quantize(&candidate);
        }
        let prediction = model.predict(&candidate)?;
        last = Some((params, candidate, trial));
        if prediction != label {
            first_success = Some(trial);
            break;
        }
    }
    let (params, adversarial, used) = last.expect("at least one trial");
    let prediction = model.predict(&adversarial)?;
    Ok(AttackOutcome {
        success: prediction != label,
        prediction,
        adversarial,
        first_success_iteration: first_success,
        iterations_used: used,
        final_params: Some(params),
        loss_trace: Vec::new(),
        skipped_steps: 0,
        elapsed: started.elapsed(),
    })
}

/// Iterative FGSM: ascend cross-entropy with sign steps, project onto the
/// L-infinity ball around `image`, clamp to `[0, 1]`.
///
/// With quantization on, each iterate is snapped to the 8-bit grid point
/// nearest to it inside the ball (the continuous value is kept for the rare
/// coordinate whose ball holds no grid point).
pub fn ifgsm_attack<M: Classifier + ?Sized>(
    model: &M,
    image: &Image,
    label: usize,
    config: &IfgsmConfig,
) -> Result<AttackOutcome> {
    config.validate()?;
    check_label(model, image, label)?;
    let started = Instant::now();
    let radius = config.epsilon / 255.0;
    let step = config.step / 255.0;
    let realize = |img: &Image| {
        if config.quantize_output {
            quantize_in_ball(img, image, radius)
        } else {
            img.clone()
        }
    };

    let mut current = image.clone();
    let mut first_success = (model.predict(&realize(&current))? != label).then_some(0);
    let mut loss_trace = Vec::new();
    let mut used = 0;
    if first_success.is_none() || config.stop == StopPolicy::LastIterate {
        for t in 1..=config.iterations {
            let ig = crate::model::input_gradient(model, &current, LogitLoss::CrossEntropy, label)?;
            loss_trace.push(ig.loss);
            used = t;
            let data = current
                .data()
                .iter()
                .zip(&ig.grad)
                .zip(image.data())
                .map(|((&v, &g), &orig)| {
                    let moved = v + step * sign(g);
                    moved.clamp(orig - radius, orig + radius).clamp(0.0, 1.0)
                })
                .collect();
            current = Image::new(image.height(), image.width(), data)?;
            if model.predict(&realize(&current))? != label {
                first_success.get_or_insert(t);
                if config.stop == StopPolicy::FirstHit {
                    break;
                }
            }
        }
    }
    let adversarial = realize(&current);
    let prediction = model.predict(&adversarial)?;
    Ok(AttackOutcome {
        success: prediction != label,
        prediction,
        adversarial,
        first_success_iteration: first_success,
        iterations_used: used,
        final_params: None,
        loss_trace,
        skipped_steps: 0,
        elapsed: started.elapsed(),
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn quantize_in_ball(candidate: &Image, center: &Image, radius: f64) -> Image {
    const GRID: f64 = 1.0 / 255.0;
    let data = candidate
        .data()
        .iter()
        .zip(center.data())
        .map(|(&v, &c)| {
            let (lo, hi) = ((c - radius).max(0.0), (c + radius).min(1.0));
            let q = quantize_value(v);
            if (lo - 1e-12..=hi + 1e-12).contains(&q) {
                q
            } else {
                let inside = if q > hi { q - GRID } else { q + GRID };
                if (lo - 1e-12..=hi + 1e-12).contains(&inside) {
                    inside
                } else {
                    v
                }
            }
        })
        .collect();
    Image::from_clamped(candidate.height(), candidate.width(), data).expect("same dimensions")
}

/// Any attack the harness and the adversarial trainer can run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Attack {
    Advcf(AdvCfConfig),
    Ifgsm(IfgsmConfig),
    Random(RandomSearchConfig),
}

impl Attack {
    pub fn kind(&self) -> &'static str {
        match self {
            Attack::Advcf(c) if matches!(c.loss, LossSpec::StyleCw { .. }) => "style_advcf",
            Attack::Advcf(_) => "advcf",
            Attack::Ifgsm(_) => "ifgsm",
            Attack::Random(_) => "random",
        }
    }

    /// `(epsilon, pieces)` for filter attacks, `(epsilon, None)` for I-FGSM.
    pub fn bound(&self) -> (f64, Option<usize>) {
        match self {
            Attack::Advcf(c) => (c.epsilon, Some(c.pieces)),
            Attack::Random(c) => (c.epsilon, Some(c.pieces)),
            Attack::Ifgsm(c) => (c.epsilon, None),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Attack::Advcf(c) => c.validate(),
            Attack::Ifgsm(c) => c.validate(),
            Attack::Random(c) => c.validate(),
        }
    }

    /// Runs the attack; `seed` feeds the random search only.
    pub fn run<M: Classifier + ?Sized>(
        &self,
        model: &M,
        image: &Image,
        label: usize,
        seed: u64,
    ) -> Result<AttackOutcome> {
        match self {
            Attack::Advcf(c) => advcf_attack(model, image, label, c),
            Attack::Ifgsm(c) => ifgsm_attack(model, image, label, c),
            Attack::Random(c) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                random_filter_search(model, image, label, c, &mut rng)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearColorProbe;

    /// Class 0 when red dominates, class 1 when blue dominates.
    fn red_blue_probe() -> LinearColorProbe {
        LinearColorProbe::new(vec![4.0, 0.0, -4.0, -4.0, 0.0, 4.0], vec![0.0, 0.0]).unwrap()
    }

    fn reddish() -> Image {
        Image::from_fn(4, 4, |c, y, x| match c {
            0 => 0.55 + 0.02 * (y + x) as f64,
            1 => 0.4,
            _ => 0.35 + 0.03 * y as f64,
        })
        .unwrap()
    }

    #[test]
    fn already_misclassified_succeeds_at_zero() {
        let model = red_blue_probe();
        let img = reddish();
        let out = advcf_attack(&model, &img, 1, &AdvCfConfig::comparison()).unwrap();
        assert!(out.success);
        assert_eq!(out.first_success_iteration, Some(0));
        assert_eq!(out.iterations_used, 0);
        assert_eq!(out.adversarial, quantize(&img));
    }

    #[test]
    fn unit_bound_pins_identity() {
        let model = red_blue_probe();
        let img = reddish();
        let cfg = AdvCfConfig {
            epsilon: 1.0,
            pieces: 8,
            ..AdvCfConfig::comparison()
        };
        let out = advcf_attack(&model, &img, 0, &cfg).unwrap();
        assert!(!out.success);
        assert_eq!(out.final_params.unwrap(), FilterParams::identity(8, 1.0).unwrap());
        assert_eq!(out.adversarial, quantize(&img));
    }

    #[test]
    fn flips_a_color_probe() {
        let model = red_blue_probe();
        let img = reddish();
        let out = advcf_attack(&model, &img, 0, &AdvCfConfig { pieces: 8, ..AdvCfConfig::comparison() }).unwrap();
        assert!(out.success, "trace {:?}", out.loss_trace);
        assert_eq!(out.prediction, 1);
        let params = out.final_params.unwrap();
        assert!(params.is_within_bounds());
        assert_eq!(out.adversarial, quantize(&apply_filter(&img, &params).unwrap()));
    }

    #[test]
    fn ifgsm_zero_budget_keeps_the_image() {
        let model = red_blue_probe();
        let img = quantize(&reddish());
        let cfg = IfgsmConfig {
            epsilon: 0.0,
            ..IfgsmConfig::default()
        };
        let out = ifgsm_attack(&model, &img, 0, &cfg).unwrap();
        assert!(!out.success);
        assert_eq!(out.adversarial, img);
    }

    #[test]
    fn ifgsm_stays_in_ball_even_off_grid() {
        let model = red_blue_probe();
        let img = reddish();
        let cfg = IfgsmConfig {
            epsilon: 3.0,
            step: 1.0,
            iterations: 6,
            quantize_output: true,
            stop: StopPolicy::LastIterate,
        };
        let out = ifgsm_attack(&model, &img, 0, &cfg).unwrap();
        assert!(out.adversarial.linf_distance(&img) <= 3.0 / 255.0 + 1e-9);
    }

    #[test]
    fn random_search_with_unit_bound() {
        let model = red_blue_probe();
        let img = reddish();
        let cfg = RandomSearchConfig {
            pieces: 8,
            epsilon: 1.0,
            trials: 1,
            quantize_output: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(!random_filter_search(&model, &img, 0, &cfg, &mut rng).unwrap().success);
        assert!(random_filter_search(&model, &img, 1, &cfg, &mut rng).unwrap().success);
    }

    #[test]
    fn style_attack_requires_style_loss() {
        let model = red_blue_probe();
        let img = reddish();
        let target = style_target(&img, "warm").unwrap();
        assert!(style_guided_advcf(&model, &img, 0, &AdvCfConfig::comparison(), &target).is_err());
        assert!(style_target(&img, "nope").is_err());
    }

    #[test]
    fn threshold_objective_stops_below_threshold() {
        // score = 10 * mean intensity; the filter can only darken so far
        let img = Image::filled(3, 3, 0.6).unwrap();
        let objective = ScoreThresholdObjective {
            score: |x: &Image| {
                let n = x.data().len() as f64;
                Ok((10.0 * x.data().iter().sum::<f64>() / n, vec![10.0 / n; x.data().len()]))
            },
            threshold: 5.0,
        };
        let search = FilterSearch {
            iterations: 50,
            step_size: 0.05,
            pieces: 8,
            epsilon: 4.0,
            quantize_output: false,
            stop: StopPolicy::FirstHit,
        };
        let run = optimize_filter(&objective, &img, &search).unwrap();
        assert!(run.goal_reached);
        let score = 10.0 * run.image.data().iter().sum::<f64>() / 27.0;
        assert!(score < 5.0);
        assert!(run.loss_trace.iter().all(|&l| l >= 5.0));
    }
}
