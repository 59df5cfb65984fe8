//! Monte Carlo simulation of seed cherry-picking.
//!
//! Every trial draws a "proposed" and a "baseline" group of outcomes from
//! one pool of runs of the *same* method, so any declared improvement is a
//! false discovery. Two decision rules are scored per trial: the std-overlap
//! rule and the paired t-test.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dpsgd::RunRecord;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::harness::CellKey;
use crate::stats::{paired_ttest, std_overlap, PairedSample};
use crate::{float_serde, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Proposed = best `top_k` of a random `subset_size` draw.
    CherryPick,
    /// Proposed = a uniform draw of `top_k`.
    Honest,
}

/// When a t-test trial counts as a pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TtestRule {
    /// Two-sided `p < α`.
    #[default]
    TwoSided,
    /// Two-sided `p < α` and a positive mean difference.
    Superior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineDraw {
    /// Baseline drawn from the whole pool; may overlap the proposed draw.
    #[default]
    Independent,
    /// Baseline drawn from the runs the proposed draw did not touch.
    Disjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedHackConfig {
    pub pool_size: usize,
    pub subset_size: usize,
    pub top_k: usize,
    pub baseline_k: usize,
    pub trials: usize,
    pub alpha: f64,
    pub mode: SelectionMode,
    #[serde(default)]
    pub ttest_rule: TtestRule,
    #[serde(default)]
    pub baseline_draw: BaselineDraw,
}

impl SeedHackConfig {
    /// 10-of-500, top 3 vs 3, 1000 trials, α = 0.05.
    pub fn standard(mode: SelectionMode) -> Self {
        Self {
            pool_size: 500,
            subset_size: 10,
            top_k: 3,
            baseline_k: 3,
            trials: 1000,
            alpha: 0.05,
            mode,
            ttest_rule: TtestRule::TwoSided,
            baseline_draw: BaselineDraw::Independent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.top_k < 2 || self.top_k != self.baseline_k {
            return Err(Error::invalid(format!(
                "the paired t-test needs equal group sizes of at least 2 (top_k={}, baseline_k={})",
                self.top_k, self.baseline_k
            )));
        }
        if self.top_k > self.subset_size || self.subset_size > self.pool_size {
            return Err(Error::invalid(format!(
                "need top_k ≤ subset_size ≤ pool_size, got {} ≤ {} ≤ {}",
                self.top_k, self.subset_size, self.pool_size
            )));
        }
        let used = match self.mode {
            SelectionMode::CherryPick => self.subset_size,
            SelectionMode::Honest => self.top_k,
        };
        if self.baseline_draw == BaselineDraw::Disjoint && used + self.baseline_k > self.pool_size {
            return Err(Error::invalid("pool too small for disjoint proposed and baseline draws"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedHackResult {
    pub mode: SelectionMode,
    pub trials: usize,
    pub std_test_passes: usize,
    pub ttest_passes: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl SeedHackResult {
    pub fn std_rate(&self) -> f64 {
        self.std_test_passes as f64 / self.trials as f64
    }

    pub fn ttest_rate(&self) -> f64 {
        self.ttest_passes as f64 / self.trials as f64
    }

    /// Two-row table of passing instances for a single pool.
    pub fn to_markdown(&self) -> String {
        format!(
            "| test | passes |\n|---|---|\n| std test | {} |\n| paired t-test | {} |\n\n\
             Entries are passing instances out of {} trials ({:?} selection, alpha = {}).\n",
            self.std_test_passes, self.ttest_passes, self.trials, self.mode, self.alpha
        )
    }
}

/// Outcome of one trial: (std test passed, t-test passed).
fn trial(pool: &[f64], cfg: &SeedHackConfig, seed: u64, index: u64) -> Result<(bool, bool)> {
    let mut r = rng::stream(seed, index);
    let n = pool.len();
    let first = match cfg.mode {
        SelectionMode::CherryPick => sample(&mut r, n, cfg.subset_size).into_vec(),
        SelectionMode::Honest => sample(&mut r, n, cfg.top_k).into_vec(),
    };
    let proposed: Vec<f64> = match cfg.mode {
        SelectionMode::CherryPick => {
            let mut subset: Vec<f64> = first.iter().map(|&i| pool[i]).collect();
            subset.sort_by(|a, b| b.total_cmp(a));
            subset.truncate(cfg.top_k);
            subset
        }
        SelectionMode::Honest => first.iter().map(|&i| pool[i]).collect(),
    };
    let baseline: Vec<f64> = match cfg.baseline_draw {
        BaselineDraw::Independent => sample(&mut r, n, cfg.baseline_k).iter().map(|i| pool[i]).collect(),
        BaselineDraw::Disjoint => {
            let taken: BTreeSet<usize> = first.into_iter().collect();
            let rest: Vec<usize> = (0..n).filter(|i| !taken.contains(i)).collect();
            sample(&mut r, rest.len(), cfg.baseline_k).iter().map(|i| pool[rest[i]]).collect()
        }
    };

    let std_pass = std_overlap(&proposed, &baseline)?;
    // Proposed in rank order against baseline in draw order.
    let report = paired_ttest(&PairedSample::new(proposed, baseline)?, cfg.alpha)?;
    let t_pass = match cfg.ttest_rule {
        TtestRule::TwoSided => report.significant,
        TtestRule::Superior => report.significant && report.mu_d > 0.0,
    };
    Ok((std_pass, t_pass))
}

/// Runs `config.trials` independent trials; trial `i` draws from stream `i`
/// of `seed`, so results do not depend on the execution strategy.
pub fn simulate(pool: &[f64], config: &SeedHackConfig, seed: u64) -> Result<SeedHackResult> {
    simulate_with(pool, config, seed, Execution::Parallel)
}

pub fn simulate_with(pool: &[f64], config: &SeedHackConfig, seed: u64, exec: Execution) -> Result<SeedHackResult> {
    config.validate()?;
    if pool.len() != config.pool_size {
        return Err(Error::invalid(format!(
            "pool has {} entries but pool_size is {}",
            pool.len(),
            config.pool_size
        )));
    }
    if pool.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("pool contains non-finite values"));
    }
    let outcomes = map_indexed(config.trials, exec, |i| trial(pool, config, seed, i as u64));
    let mut result = SeedHackResult {
        mode: config.mode,
        trials: config.trials,
        std_test_passes: 0,
        ttest_passes: 0,
        alpha: config.alpha,
        seed,
    };
    for o in outcomes {
        let (s, t) = o?;
        result.std_test_passes += usize::from(s);
        result.ttest_passes += usize::from(t);
    }
    Ok(result)
}

/// Test accuracies of one cell's successful runs, in record order.
pub fn pool_from_records(records: &[RunRecord]) -> Result<Vec<f64>> {
    let first = records.first().ok_or_else(|| Error::invalid("no records to build a pool from"))?;
    let cell = CellKey::of(first);
    if let Some(other) = records.iter().find(|r| CellKey::of(r) != cell) {
        return Err(Error::invalid(format!(
            "records mix cells: {cell} and {}",
            CellKey::of(other)
        )));
    }
    let skipped = records.iter().filter(|r| !r.is_ok()).count();
    if skipped > 0 {
        log::warn!("{skipped} failed run(s) left out of the pool for {cell}");
    }
    Ok(records.iter().filter(|r| r.is_ok()).map(|r| r.test_accuracy).collect())
}

/// Normal pool with the given mean and deviation.
pub fn synthetic_pool(mean: f64, std: f64, size: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, u64::MAX);
    (0..size).map(|_| mean + std * r.sample::<f64, _>(StandardNormal)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonResult {
    #[serde(with = "float_serde")]
    pub epsilon: f64,
    pub result: SeedHackResult,
}

/// [`simulate`] on each pool (with `pool_size` set to that pool's length),
/// ordered by increasing ε. All pools share `seed`.
pub fn variance_effect_sweep(pools: &[(f64, Vec<f64>)], config: &SeedHackConfig, seed: u64) -> Result<Vec<EpsilonResult>> {
    variance_effect_sweep_with(pools, config, seed, Execution::Parallel)
}

pub fn variance_effect_sweep_with(
    pools: &[(f64, Vec<f64>)],
    config: &SeedHackConfig,
    seed: u64,
    exec: Execution,
) -> Result<Vec<EpsilonResult>> {
    if pools.len() < 2 {
        return Err(Error::invalid("need at least two pools to compare"));
    }
    let mut out = pools
        .iter()
        .map(|(eps, pool)| {
            let cfg = SeedHackConfig {
                pool_size: pool.len(),
                ..*config
            };
            Ok(EpsilonResult {
                epsilon: *eps,
                result: simulate_with(pool, &cfg, seed, exec)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    Ok(out)
}

/// Table with one column per ε and one row per decision rule.
pub fn render_markdown(results: &[EpsilonResult]) -> String {
    let eps = |e: f64| if e.is_infinite() { "∞".to_string() } else { format!("{e}") };
    let mut s = String::new();
    let _ = write!(s, "| test |");
    for r in results {
        let _ = write!(s, " ε = {} |", eps(r.epsilon));
    }
    let _ = write!(s, "\n|---|");
    for _ in results {
        let _ = write!(s, "---|");
    }
    let _ = write!(s, "\n| std test |");
    for r in results {
        let _ = write!(s, " {} |", r.result.std_test_passes);
    }
    let _ = write!(s, "\n| paired t-test |");
    for r in results {
        let _ = write!(s, " {} |", r.result.ttest_passes);
    }
    s.push('\n');
    if let Some(first) = results.first() {
        let _ = writeln!(
            s,
            "\nEntries are passing instances out of {} trials ({:?} selection, alpha = {}).",
            first.result.trials, first.result.mode, first.result.alpha
        );
    }
    s
}
