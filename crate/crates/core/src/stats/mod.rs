//! Paired-comparison statistics: raw summaries, the paired t-test, Cohen's d
//! with a pooled deviation, the `n ≈ 16/d²` power rule, and the informal
//! "mean ± std do not overlap" rule it is contrasted with.
//!
//! Raw summaries and Cohen's d use population deviations (denominator `n`).
//! The t-statistic uses the sample deviation of the differences (denominator
//! `n − 1`) and a two-sided p-value, matching `scipy.stats.ttest_rel`.

mod power;
mod tdist;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float_serde;

pub use power::simulated_power;
pub use tdist::{t_tail_probability, NORMAL_APPROX_DF};

/// Statistical power the `16/d²` rule targets.
pub const RULE_OF_THUMB_POWER: f64 = 0.8;

/// Two aligned measurement vectors, `a` for the proposed method and `b` for
/// the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl PairedSample {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::invalid(format!(
                "paired vectors differ in length ({} vs {})",
                a.len(),
                b.len()
            )));
        }
        if a.is_empty() {
            return Err(Error::invalid("paired sample is empty"));
        }
        if a.iter().chain(&b).any(|x| !x.is_finite()) {
            return Err(Error::invalid("paired sample contains non-finite values"));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// The sample with the roles of `a` and `b` exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            a: self.b.clone(),
            b: self.a.clone(),
        }
    }

    pub fn differences(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(x, y)| x - y).collect()
    }
}

/// Full verdict of a paired comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub n: usize,
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub mu_d: f64,
    /// Sample deviation (`n − 1`) of the paired differences.
    pub sigma_d: f64,
    #[serde(with = "float_serde")]
    pub t_stat: f64,
    pub p_value: f64,
    /// `None` when both groups have zero spread.
    pub cohen_d: Option<f64>,
    pub alpha: f64,
    pub significant: bool,
    /// Runs needed for ~80% power at the observed effect; `None` when the
    /// effect is zero or undefined.
    pub required_n: Option<u64>,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sum_sq_dev(x: &[f64], m: f64) -> f64 {
    x.iter().map(|v| (v - m) * (v - m)).sum()
}

/// Mean and population standard deviation.
pub fn raw_summary(x: &[f64]) -> Result<(f64, f64)> {
    if x.is_empty() {
        return Err(Error::invalid("cannot summarize an empty vector"));
    }
    let m = mean(x);
    Ok((m, (sum_sq_dev(x, m) / x.len() as f64).sqrt()))
}

/// Cohen's d with the equal-size pooled deviation `sqrt((σ1² + σ2²)/2)`.
pub fn cohens_d(s: &PairedSample) -> Result<f64> {
    let (mu1, sigma1) = raw_summary(s.a())?;
    let (mu2, sigma2) = raw_summary(s.b())?;
    cohens_d_from(mu1, sigma1, mu2, sigma2)
}

fn cohens_d_from(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> Result<f64> {
    let pooled = ((sigma1 * sigma1 + sigma2 * sigma2) / 2.0).sqrt();
    if pooled == 0.0 {
        return Err(Error::DegenerateSample(
            "both groups have zero deviation; pooled deviation is 0".into(),
        ));
    }
    Ok((mu1 - mu2) / pooled)
}

/// Smallest `n` with `n·d² ≥ 16`.
pub fn required_runs(effect_size: f64) -> Result<u64> {
    if effect_size == 0.0 {
        return Err(Error::InfiniteRuns);
    }
    if !effect_size.is_finite() {
        return Err(Error::invalid("effect size must be finite"));
    }
    let d2 = effect_size * effect_size;
    let raw = (16.0 / d2).ceil();
    if !raw.is_finite() || raw >= u64::MAX as f64 {
        return Err(Error::InfiniteRuns);
    }
    // The float ceiling can land one off the integer boundary; settle it
    // against the defining inequality.
    let mut n = (raw as u64).max(1);
    while (n as f64) * d2 < 16.0 {
        n += 1;
    }
    while n > 1 && ((n - 1) as f64) * d2 >= 16.0 {
        n -= 1;
    }
    Ok(n)
}

/// Declares `a` superior when `μ1 − σ1 > μ2 + σ2` (population deviations).
/// The groups need not have equal length.
pub fn std_overlap(a: &[f64], b: &[f64]) -> Result<bool> {
    let (mu1, sigma1) = raw_summary(a)?;
    let (mu2, sigma2) = raw_summary(b)?;
    Ok(mu1 - sigma1 > mu2 + sigma2)
}

pub fn std_overlap_test(s: &PairedSample) -> bool {
    // PairedSample is non-empty by construction.
    std_overlap(s.a(), s.b()).unwrap_or(false)
}

/// Paired t-test with a two-sided p-value, plus the effect size and the
/// power-rule run count from the same data.
///
/// When the differences have zero deviation the statistic is 0 (p = 1) if
/// their mean is 0, and ±∞ (p = 0) otherwise.
pub fn paired_ttest(s: &PairedSample, alpha: f64) -> Result<TestReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n = s.n();
    if n < 2 {
        return Err(Error::invalid("paired t-test needs at least 2 pairs"));
    }
    let (mu1, sigma1) = raw_summary(s.a())?;
    let (mu2, sigma2) = raw_summary(s.b())?;
    let d = s.differences();
    let mu_d = mean(&d);
    let sigma_d = (sum_sq_dev(&d, mu_d) / (n - 1) as f64).sqrt();

    let (t_stat, p_value) = if sigma_d == 0.0 {
        if mu_d == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mu_d), 0.0)
        }
    } else {
        let t = mu_d * (n as f64).sqrt() / sigma_d;
        (t, t_tail_probability(t, (n - 1) as u64)?)
    };

    let cohen_d = cohens_d_from(mu1, sigma1, mu2, sigma2).ok();
    let required_n = cohen_d.and_then(|d| required_runs(d).ok());

    Ok(TestReport {
        n,
        mu1,
        mu2,
        sigma1,
        sigma2,
        mu_d,
        sigma_d,
        t_stat,
        p_value,
        cohen_d,
        alpha,
        significant: p_value < alpha,
        required_n,
    })
}
