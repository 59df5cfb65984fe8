use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::io::JsonlWriter;
use super::manifest::ExperimentManifest;
use crate::accountant::calibrate_sigma;
use crate::dpsgd::{load_dataset, train, Dataset, GradClipPolicy, RunRecord, SeedPolicy, TrainConfig};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::{float_serde, rng};

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub exec: Execution,
    /// JSON-lines file receiving each record as it completes.
    pub out: Option<PathBuf>,
    /// Reuse the seeds of these records (matched by `run_id`).
    pub replay: Option<Vec<RunRecord>>,
    /// Permit a fixed master seed on private cells.
    pub allow_unsafe_seed: bool,
}

/// Resolved training configuration of one (method, setting) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedCell {
    pub method_id: String,
    pub setting_index: usize,
    #[serde(with = "float_serde")]
    pub epsilon: f64,
    pub sample_rate: f64,
    pub config: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub cells: Vec<ResolvedCell>,
    /// Sorted by `run_id`.
    pub records: Vec<RunRecord>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| !r.is_ok()).count()
    }
}

struct Job {
    cell: usize,
    run_index: usize,
    run_id: String,
    seed: u64,
}

/// Runs every (method, setting, run) of the manifest.
///
/// Each private cell gets the noise multiplier that meets its ε for the
/// cell's sample rate and step count; `ε = ∞` cells keep the method's
/// clipping but add no noise.
/// Seeds are fixed before any run starts, so the worker count never
/// changes a record. Diverged runs are kept as failure records.
pub fn run_sweep(manifest: &ExperimentManifest, opts: &SweepOptions) -> Result<SweepOutcome> {
    manifest.validate()?;

    let mut splits: BTreeMap<&str, (Dataset, Dataset)> = BTreeMap::new();
    for s in &manifest.settings {
        if !splits.contains_key(s.dataset_id.as_str()) {
            let data = load_dataset(&s.dataset_id)?;
            splits.insert(&s.dataset_id, data.split(manifest.test_fraction)?);
        }
    }

    let mut cells = Vec::new();
    for m in &manifest.methods {
        for (si, s) in manifest.settings.iter().enumerate() {
            let n_train = splits[s.dataset_id.as_str()].0.len();
            let q = m.batch_target as f64 / n_train as f64;
            let private = s.epsilon.is_finite();
            let sigma = if private {
                if m.clip == GradClipPolicy::None {
                    return Err(Error::Config(format!(
                        "method {} has no clipping but setting {si} is private (epsilon {})",
                        m.method_id, s.epsilon
                    )));
                }
                calibrate_sigma(s.epsilon, manifest.delta, q, m.steps)?
            } else {
                0.0
            };
            let config = TrainConfig {
                method_id: m.method_id.clone(),
                dataset_id: s.dataset_id.clone(),
                layout: s.layout,
                learning_rate: m.learning_rate,
                batch_target: m.batch_target,
                steps: m.steps,
                clip: m.clip,
                sigma,
                delta: manifest.delta,
                target_epsilon: private.then_some(s.epsilon),
                test_fraction: manifest.test_fraction,
                seed_policy: manifest.seed_policy,
            };
            config.validate_for(&splits[s.dataset_id.as_str()].0)?;
            cells.push(ResolvedCell {
                method_id: m.method_id.clone(),
                setting_index: si,
                epsilon: s.epsilon,
                sample_rate: q,
                config,
            });
        }
    }

    let replay: Option<HashMap<&str, u64>> = opts
        .replay
        .as_ref()
        .map(|rs| rs.iter().map(|r| (r.run_id.as_str(), r.seed)).collect());
    if let SeedPolicy::Fixed(_) = manifest.seed_policy {
        if !opts.allow_unsafe_seed && cells.iter().any(|c| c.config.is_private()) {
            return Err(Error::Config(
                "fixed master seed on a private sweep needs the unsafe-fixed-seed acknowledgement".into(),
            ));
        }
    }

    let mut jobs = Vec::with_capacity(manifest.total_runs());
    for (ci, cell) in cells.iter().enumerate() {
        for run_index in 0..manifest.runs_per_cell {
            let run_id = format!("{}:s{:03}:r{:04}", cell.method_id, cell.setting_index, run_index);
            let seed = match (&replay, manifest.seed_policy) {
                (Some(map), _) => *map
                    .get(run_id.as_str())
                    .ok_or_else(|| Error::invalid(format!("replay records lack run {run_id}")))?,
                (None, SeedPolicy::FreshEntropy) => rng::entropy_seed(),
                (None, SeedPolicy::Fixed(master)) => rng::stream(master, jobs.len() as u64).next_u64(),
            };
            jobs.push(Job {
                cell: ci,
                run_index,
                run_id,
                seed,
            });
        }
    }

    let sink = opts.out.as_deref().map(JsonlWriter::create).transpose()?;
    let results = map_indexed(jobs.len(), opts.exec, |j| -> Result<RunRecord> {
        let job = &jobs[j];
        let config = &cells[job.cell].config;
        let (train_set, test_set) = &splits[config.dataset_id.as_str()];
        let mut record = match train(config, train_set, test_set, job.seed) {
            Ok(r) => r,
            Err(e @ Error::Diverged { .. }) => {
                log::warn!("run {} failed: {e}", job.run_id);
                RunRecord::failed(config, train_set.len(), job.seed, &e)
            }
            Err(e) => return Err(e),
        };
        record.run_id = job.run_id.clone();
        record.run_index = job.run_index;
        if let Some(sink) = &sink {
            sink.append(&record)?;
        }
        Ok(record)
    });

    let mut records = results.into_iter().collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(SweepOutcome { cells, records })
}
