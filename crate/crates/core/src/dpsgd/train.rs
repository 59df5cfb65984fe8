use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::clip::GradClipPolicy;
use super::data::{Dataset, Example};
use super::model::{per_example_gradients, ModelLayout, ModelParams};
use crate::accountant::{epsilon_for, AccountingParams};
use crate::error::{Error, Result};
use crate::{float_serde, rng, TOOL_VERSION};

/// Where a run's seed comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Drawn from OS entropy and recorded.
    #[default]
    FreshEntropy,
    /// A caller-chosen seed. The noise becomes predictable, so private runs
    /// using it carry no privacy guarantee.
    Fixed(u64),
}

/// The per-step knobs of DP-SGD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub learning_rate: f64,
    /// Nominal lot size `L`; the aggregate is divided by this, not by the
    /// realized Poisson batch size.
    pub batch_target: usize,
    pub clip: GradClipPolicy,
    /// Noise multiplier; 0 disables noise.
    pub sigma: f64,
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_target == 0 {
            return Err(Error::Config("batch target must be at least 1".into()));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be finite and non-negative, got {}", self.sigma)));
        }
        self.clip.validate()?;
        if self.sigma > 0.0 && self.clip == GradClipPolicy::None {
            return Err(Error::Config(
                "noise requires a clipping policy: unclipped gradients have unbounded sensitivity".into(),
            ));
        }
        Ok(())
    }

    /// Standard deviation of the noise added to the clipped-gradient sum.
    pub fn noise_std(&self) -> f64 {
        self.sigma * self.clip.sensitivity().unwrap_or(0.0)
    }
}

/// Full description of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method_id: String,
    pub dataset_id: String,
    pub layout: ModelLayout,
    pub learning_rate: f64,
    pub batch_target: usize,
    pub steps: u64,
    pub clip: GradClipPolicy,
    pub sigma: f64,
    pub delta: f64,
    /// Budget `sigma` was calibrated for, if any; recorded as the run's ε.
    #[serde(with = "float_serde::option", default)]
    pub target_epsilon: Option<f64>,
    pub test_fraction: f64,
    #[serde(default)]
    pub seed_policy: SeedPolicy,
}

impl TrainConfig {
    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            learning_rate: self.learning_rate,
            batch_target: self.batch_target,
            clip: self.clip,
            sigma: self.sigma,
        }
    }

    pub fn is_private(&self) -> bool {
        self.sigma > 0.0
    }

    pub fn validate_for(&self, train: &Dataset) -> Result<()> {
        self.step_config().validate()?;
        self.layout.validate()?;
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.layout.input_dim != train.dim() {
            return Err(Error::Config(format!(
                "layout {} expects {} features but dataset has {}",
                self.layout,
                self.layout.input_dim,
                train.dim()
            )));
        }
        if self.layout.num_classes < train.num_classes() {
            return Err(Error::Config(format!(
                "layout {} has {} classes but dataset has {}",
                self.layout,
                self.layout.num_classes,
                train.num_classes()
            )));
        }
        if self.batch_target > train.len() {
            return Err(Error::Config(format!(
                "batch target {} exceeds training set size {}",
                self.batch_target,
                train.len()
            )));
        }
        Ok(())
    }

    /// Seed for this run under the configured policy. A fixed seed on a
    /// private run is refused unless `allow_unsafe` is set.
    pub fn resolve_seed(&self, allow_unsafe: bool) -> Result<u64> {
        match self.seed_policy {
            SeedPolicy::FreshEntropy => Ok(rng::entropy_seed()),
            SeedPolicy::Fixed(seed) => {
                if self.is_private() && !allow_unsafe {
                    return Err(Error::Config(
                        "a fixed seed makes the DP noise predictable; pass the unsafe-fixed-seed \
                         acknowledgement to proceed without a privacy guarantee"
                            .into(),
                    ));
                }
                Ok(seed)
            }
        }
    }
}

/// Configuration and outcome of one seeded training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub run_index: usize,
    pub method_id: String,
    pub dataset_id: String,
    pub layout: String,
    /// Target budget of the run's cell; `inf` for non-private runs.
    #[serde(with = "float_serde")]
    pub epsilon: f64,
    /// Budget actually consumed according to the accountant.
    #[serde(with = "float_serde")]
    pub epsilon_spent: f64,
    pub delta: f64,
    pub sigma: f64,
    pub clip: String,
    pub seed: u64,
    /// False when a private run used a caller-chosen seed.
    pub privacy_valid: bool,
    pub steps: u64,
    pub epochs: f64,
    pub batch_target: usize,
    pub learning_rate: f64,
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    /// Steps whose Poisson batch came out empty. They count toward the
    /// step budget and, when noisy, still apply the noise.
    pub empty_batches: u64,
    /// Set when the run did not complete, e.g. on divergence.
    #[serde(default)]
    pub failure: Option<String>,
    pub wall_time_seconds: f64,
    pub tool_version: String,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.failure.is_none()
    }

    /// Record for a run that could not finish.
    pub fn failed(config: &TrainConfig, n_train: usize, seed: u64, err: &Error) -> Self {
        let mut r = Self::skeleton(config, n_train, seed, f64::NAN);
        r.failure = Some(err.to_string());
        r
    }

    fn skeleton(config: &TrainConfig, n_train: usize, seed: u64, epsilon_spent: f64) -> Self {
        let epsilon_spent = if config.is_private() { epsilon_spent } else { f64::INFINITY };
        Self {
            run_id: format!("{}-{seed:016x}", config.method_id),
            run_index: 0,
            method_id: config.method_id.clone(),
            dataset_id: config.dataset_id.clone(),
            layout: config.layout.to_string(),
            epsilon: config.target_epsilon.unwrap_or(epsilon_spent),
            epsilon_spent,
            delta: config.delta,
            sigma: config.sigma,
            clip: config.clip.describe(),
            seed,
            privacy_valid: !config.is_private() || config.seed_policy == SeedPolicy::FreshEntropy,
            steps: config.steps,
            epochs: config.steps as f64 * config.batch_target as f64 / n_train.max(1) as f64,
            batch_target: config.batch_target,
            learning_rate: config.learning_rate,
            test_accuracy: 0.0,
            train_accuracy: 0.0,
            empty_batches: 0,
            failure: None,
            wall_time_seconds: 0.0,
            tool_version: TOOL_VERSION.to_string(),
        }
    }

    /// Copy with the wall-clock measurement cleared, for comparing runs
    /// that must agree bit-for-bit.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_seconds: 0.0,
            ..self.clone()
        }
    }
}

/// Indices of a Poisson sample: each of `n` examples is kept independently
/// with probability `l/n`.
pub fn poisson_batch<R: Rng + ?Sized>(n: usize, l: usize, rng: &mut R) -> Result<Vec<usize>> {
    if l == 0 || l > n {
        return Err(Error::invalid(format!("need 0 < L ≤ N, got L={l}, N={n}")));
    }
    let q = l as f64 / n as f64;
    Ok((0..n).filter(|_| rng.random::<f64>() < q).collect())
}

fn accumulate(sum: &mut [f64], g: &[f64]) {
    sum.iter_mut().zip(g).for_each(|(s, x)| *s += x);
}

fn descend(params: &ModelParams, aggregate: &[f64], batch_target: usize, lr: f64) -> ModelParams {
    let l = batch_target as f64;
    let theta = params
        .theta
        .iter()
        .zip(aggregate)
        .map(|(t, s)| t - lr * (s / l))
        .collect();
    ModelParams {
        layout: params.layout,
        theta,
    }
}

/// Plain mini-batch SGD step: `θ − η · (1/L) Σ ∇loss_i`.
pub fn sgd_step(params: &ModelParams, batch: &[Example<'_>], learning_rate: f64, batch_target: usize) -> Result<ModelParams> {
    if batch_target == 0 {
        return Err(Error::Config("batch target must be at least 1".into()));
    }
    let mut sum = vec![0.0; params.theta.len()];
    for ex in batch {
        accumulate(&mut sum, &params.example_gradient(ex)?);
    }
    Ok(descend(params, &sum, batch_target, learning_rate))
}

/// One DP-SGD step: clip each per-example gradient, add
/// `N(0, (σ·sensitivity)² I)` to the sum, divide by the nominal `L` and
/// descend. Noise is drawn from `rng` only when `σ > 0`.
pub fn dpsgd_step<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &[Example<'_>],
    config: &StepConfig,
    rng: &mut R,
) -> Result<ModelParams> {
    config.validate()?;
    let grads = per_example_gradients(params, batch)?;
    let mut sum = vec![0.0; params.theta.len()];
    for g in &grads {
        accumulate(&mut sum, &config.clip.apply(g)?);
    }
    Ok(noisy_descend(params, sum, config, rng))
}

fn noisy_descend<R: Rng + ?Sized>(params: &ModelParams, mut sum: Vec<f64>, config: &StepConfig, rng: &mut R) -> ModelParams {
    if config.sigma > 0.0 {
        let std = config.noise_std();
        for s in sum.iter_mut() {
            *s += std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    descend(params, &sum, config.batch_target, config.learning_rate)
}

/// Trains with Poisson-sampled DP-SGD for `config.steps` steps and
/// evaluates on both splits. Identical `(config, data, seed)` give identical
/// records apart from `wall_time_seconds`.
pub fn train(config: &TrainConfig, train_set: &Dataset, test_set: &Dataset, seed: u64) -> Result<RunRecord> {
    config.validate_for(train_set)?;
    let started = Instant::now();
    let epsilon_spent = if config.is_private() {
        epsilon_for(&AccountingParams {
            delta: config.delta,
            sigma: config.sigma,
            sample_rate: config.batch_target as f64 / train_set.len() as f64,
            steps: config.steps,
        })?
        .epsilon
    } else {
        f64::INFINITY
    };

    let step = config.step_config();
    let mut params = ModelParams::init(config.layout, &mut rng::stream(seed, rng::INIT_STREAM));
    let mut empty_batches = 0;
    for t in 0..config.steps {
        let idx = poisson_batch(train_set.len(), config.batch_target, &mut rng::sampling_stream(seed, t))?;
        let mut noise = rng::noise_stream(seed, t);
        if idx.is_empty() {
            empty_batches += 1;
            // The accountant assumes every step releases a noisy sum, so an
            // empty draw still gets its noise; without noise it is a no-op.
            if step.sigma > 0.0 {
                params = noisy_descend(&params, vec![0.0; params.theta.len()], &step, &mut noise);
            }
        } else {
            params = dpsgd_step(&params, &train_set.gather(&idx), &step, &mut noise)?;
        }
        if !params.is_finite() {
            return Err(Error::Diverged { step: t });
        }
    }

    let mut record = RunRecord::skeleton(config, train_set.len(), seed, epsilon_spent);
    record.train_accuracy = params.accuracy(train_set);
    record.test_accuracy = params.accuracy(test_set);
    record.empty_batches = empty_batches;
    record.wall_time_seconds = started.elapsed().as_secs_f64();
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpsgd::data::BlobSpec;

    fn blobs() -> (Dataset, Dataset) {
        BlobSpec { n: 400, dims: 2, classes: 2, separation: 3.0, seed: 11 }
            .generate()
            .unwrap()
            .split(0.25)
            .unwrap()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            method_id: "sgd".into(),
            dataset_id: "blobs".into(),
            layout: ModelLayout::logistic(2, 2),
            learning_rate: 0.5,
            batch_target: 30,
            steps: 200,
            clip: GradClipPolicy::None,
            sigma: 0.0,
            delta: 1e-5,
            target_epsilon: None,
            test_fraction: 0.25,
            seed_policy: SeedPolicy::FreshEntropy,
        }
    }

    #[test]
    fn single_example_step_is_plain_gradient_descent() {
        let p = ModelParams::init(ModelLayout::mlp(2, 3, 2), &mut rng::stream(1, 0));
        let x = [0.4, -0.2];
        let ex = Example { features: &x, label: 1 };
        let g = p.example_gradient(&ex).unwrap();
        let want: Vec<f64> = p.theta.iter().zip(&g).map(|(t, gi)| t - 0.1 * (gi / 1.0)).collect();
        let cfg = StepConfig { learning_rate: 0.1, batch_target: 1, clip: GradClipPolicy::None, sigma: 0.0 };
        let got = dpsgd_step(&p, &[ex], &cfg, &mut rng::stream(0, 0)).unwrap();
        assert_eq!(got.theta, want);
    }

    #[test]
    fn inactive_clipping_matches_mean_gradient() {
        let (train_set, _) = blobs();
        let p = ModelParams::zeros(ModelLayout::logistic(2, 2));
        let batch = train_set.gather(&[0, 1, 2, 3, 4]);
        let basic = StepConfig { learning_rate: 0.3, batch_target: 5, clip: GradClipPolicy::Basic { clip_bound: 1e12 }, sigma: 0.0 };
        let a = dpsgd_step(&p, &batch, &basic, &mut rng::stream(0, 0)).unwrap();
        let b = sgd_step(&p, &batch, 0.3, 5).unwrap();
        for (x, y) in a.theta.iter().zip(&b.theta) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn noisy_step_is_deterministic_given_rng() {
        let (train_set, _) = blobs();
        let p = ModelParams::zeros(ModelLayout::logistic(2, 2));
        let batch = train_set.gather(&[3, 5, 8]);
        let cfg = StepConfig { learning_rate: 0.3, batch_target: 3, clip: GradClipPolicy::Basic { clip_bound: 1.0 }, sigma: 1.1 };
        let a = dpsgd_step(&p, &batch, &cfg, &mut rng::noise_stream(9, 4)).unwrap();
        let b = dpsgd_step(&p, &batch, &cfg, &mut rng::noise_stream(9, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, dpsgd_step(&p, &batch, &cfg, &mut rng::noise_stream(9, 5)).unwrap());
    }

    #[test]
    fn noise_without_clipping_rejected() {
        let cfg = StepConfig { learning_rate: 0.1, batch_target: 1, clip: GradClipPolicy::None, sigma: 1.0 };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let c = TrainConfig { sigma: 1.0, ..config() };
        let (train_set, test_set) = blobs();
        assert!(matches!(train(&c, &train_set, &test_set, 1), Err(Error::Config(_))));
    }

    #[test]
    fn auto_clipping_noise_uses_unit_sensitivity() {
        let cfg = StepConfig { learning_rate: 0.1, batch_target: 1, clip: GradClipPolicy::Auto { gamma: 0.01 }, sigma: 2.0 };
        assert_eq!(cfg.noise_std(), 2.0);
        let cfg = StepConfig { clip: GradClipPolicy::Basic { clip_bound: 0.5 }, ..cfg };
        assert_eq!(cfg.noise_std(), 1.0);
    }

    #[test]
    fn full_batch_includes_everything() {
        let mut r = rng::stream(4, 1);
        assert_eq!(poisson_batch(50, 50, &mut r).unwrap(), (0..50).collect::<Vec<_>>());
        assert!(poisson_batch(5, 6, &mut r).is_err());
        assert!(poisson_batch(5, 0, &mut r).is_err());
    }

    #[test]
    fn empty_noisy_step_still_adds_noise() {
        let p = ModelParams::zeros(ModelLayout::logistic(3, 2));
        let cfg = StepConfig { learning_rate: 0.1, batch_target: 4, clip: GradClipPolicy::Basic { clip_bound: 1.0 }, sigma: 1.0 };
        let zero = vec![0.0; p.theta.len()];
        let moved = noisy_descend(&p, zero.clone(), &cfg, &mut rng::stream(1, 2));
        assert!(moved.theta.iter().all(|t| *t != 0.0));
        let still = noisy_descend(&p, zero, &StepConfig { sigma: 0.0, ..cfg }, &mut rng::stream(1, 2));
        assert_eq!(still.theta, p.theta);
    }

    #[test]
    fn empty_batches_are_counted() {
        let (train_set, test_set) = blobs();
        let c = TrainConfig { batch_target: 1, steps: 400, ..config() };
        let r = train(&c, &train_set, &test_set, 3).unwrap();
        // q = 1/300, so P(empty) ≈ 0.37
        assert!(r.empty_batches > 80 && r.empty_batches < 230, "{}", r.empty_batches);
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (train_set, test_set) = blobs();
        let r = train(&config(), &train_set, &test_set, 42).unwrap();
        assert!(r.test_accuracy >= 0.95, "{}", r.test_accuracy);
        assert_eq!(r.epsilon, f64::INFINITY);
        assert!(r.privacy_valid);
    }

    #[test]
    fn training_is_deterministic() {
        let (train_set, test_set) = blobs();
        let c = TrainConfig {
            clip: GradClipPolicy::Basic { clip_bound: 1.0 },
            sigma: 1.0,
            layout: ModelLayout::mlp(2, 4, 2),
            ..config()
        };
        let a = train(&c, &train_set, &test_set, 77).unwrap();
        let b = train(&c, &train_set, &test_set, 77).unwrap();
        assert_eq!(a.without_timing(), b.without_timing());
        assert!(a.epsilon_spent.is_finite());
    }

    #[test]
    fn divergence_reports_step() {
        let (train_set, test_set) = blobs();
        let c = TrainConfig { learning_rate: 1e308, layout: ModelLayout::mlp(2, 4, 2), ..config() };
        assert!(matches!(train(&c, &train_set, &test_set, 1), Err(Error::Diverged { .. })));
    }

    #[test]
    fn fixed_seed_policy() {
        let private = TrainConfig {
            clip: GradClipPolicy::Basic { clip_bound: 1.0 },
            sigma: 1.0,
            seed_policy: SeedPolicy::Fixed(5),
            ..config()
        };
        assert!(private.resolve_seed(false).is_err());
        assert_eq!(private.resolve_seed(true).unwrap(), 5);
        let (train_set, test_set) = blobs();
        assert!(!train(&private, &train_set, &test_set, 5).unwrap().privacy_valid);
        let public = TrainConfig { seed_policy: SeedPolicy::Fixed(5), ..config() };
        assert_eq!(public.resolve_seed(false).unwrap(), 5);
    }
}
