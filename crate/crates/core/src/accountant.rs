//! Rényi-DP accounting for Poisson-subsampled Gaussian DP-SGD.
//!
//! Per-step RDP at integer order `α` is `ln(A_α)/(α − 1)` with
//!
//! ```text
//! A_α = Σ_{k=0}^{α} C(α,k) (1−q)^{α−k} q^k exp((k² − k) / (2σ²))
//! ```
//!
//! evaluated in log space. Non-integer orders take the larger of the two
//! adjacent integer-order values (order 1 is skipped for `α < 2`). Steps
//! compose additively and the total converts to `(ε, δ)`-DP with
//! `ε = ε_rdp + ln(1/δ)/(α − 1)`, minimized over a fixed order grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest integer order on the default grid.
pub const MAX_INTEGER_ORDER: u32 = 256;

/// Noise-multiplier search bracket for [`calibrate_sigma`].
pub const SIGMA_BRACKET: (f64, f64) = (0.3, 1e4);

/// Relative tolerance of the calibrated noise multiplier.
pub const SIGMA_REL_TOL: f64 = 1e-4;

/// DP-SGD privacy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    /// Noise multiplier: noise std divided by `clip_bound`.
    pub sigma: f64,
    /// Per-example L2 sensitivity bound `C`.
    pub clip_bound: f64,
    /// Poisson inclusion probability `q = L/N`.
    pub sample_rate: f64,
    pub steps: u64,
}

impl PrivacyParams {
    pub fn validate(&self) -> Result<()> {
        self.accounting().validate()?;
        if !(self.clip_bound > 0.0) {
            return Err(Error::invalid("clip bound must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(())
    }

    pub fn accounting(&self) -> AccountingParams {
        AccountingParams {
            delta: self.delta,
            sigma: self.sigma,
            sample_rate: self.sample_rate,
            steps: self.steps,
        }
    }
}

/// Everything needed to compute ε (the clip bound only scales the noise and
/// does not enter the accounting).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountingParams {
    pub delta: f64,
    pub sigma: f64,
    pub sample_rate: f64,
    pub steps: u64,
}

impl AccountingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        validate_rate(self.sample_rate)?;
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        Ok(())
    }
}

fn validate_rate(q: f64) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("sample rate must lie in (0, 1], got {q}")));
    }
    Ok(())
}

/// RDP guarantee as a function of the order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    pub orders: Vec<f64>,
    pub eps_rdp: Vec<f64>,
}

impl RdpCurve {
    /// Composed RDP curve for `steps` steps over `orders`.
    pub fn subsampled_gaussian(q: f64, sigma: f64, steps: u64, orders: &[f64]) -> Result<Self> {
        let table = IntegerOrderTable::new(q, sigma, max_ceil(orders)?)?;
        let eps_rdp = orders
            .iter()
            .map(|&a| table.at(a).map(|e| compose(e, steps)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            orders: orders.to_vec(),
            eps_rdp,
        })
    }

    /// Smallest `(ε, order)` after converting every point to `(ε, δ)`-DP.
    /// Saturated (infinite) points are skipped.
    pub fn best_epsilon(&self, delta: f64) -> Result<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        for (&order, &rdp) in self.orders.iter().zip(&self.eps_rdp) {
            if !rdp.is_finite() {
                continue;
            }
            let eps = rdp_to_dp(order, rdp, delta)?;
            if best.is_none_or(|(b, _)| eps < b) {
                best = Some((eps, order));
            }
        }
        best.ok_or_else(|| {
            Error::AccountingFailed(format!(
                "RDP saturated at all {} orders (largest order {})",
                self.orders.len(),
                self.orders.last().copied().unwrap_or(f64::NAN)
            ))
        })
    }
}

/// The fixed order grid: `1.25, 1.5, …, 63.5` in steps of 0.25 together
/// with the integers `2..=256`, sorted and de-duplicated.
pub fn default_orders() -> Vec<f64> {
    let mut orders: Vec<f64> = (5..=254).map(|i| i as f64 * 0.25).collect();
    orders.extend((2..=MAX_INTEGER_ORDER).map(f64::from));
    orders.sort_by(f64::total_cmp);
    orders.dedup();
    orders
}

fn max_ceil(orders: &[f64]) -> Result<u32> {
    let mut hi = 2u32;
    for &a in orders {
        check_order(a)?;
        hi = hi.max(a.ceil() as u32);
    }
    Ok(hi)
}

fn check_order(order: f64) -> Result<()> {
    if !(order > 1.0) || !order.is_finite() || order > 1e6 {
        return Err(Error::invalid(format!("Rényi order must lie in (1, 1e6], got {order}")));
    }
    Ok(())
}

/// Per-step RDP values at integer orders `2..=max`.
struct IntegerOrderTable {
    values: Vec<f64>,
}

impl IntegerOrderTable {
    fn new(q: f64, sigma: f64, max: u32) -> Result<Self> {
        validate_rate(q)?;
        if !(sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        let mut ln_fact = vec![0.0f64; max as usize + 1];
        for i in 1..=max as usize {
            ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
        }
        let values = (2..=max)
            .map(|a| integer_order_rdp(q, sigma, a, &ln_fact))
            .collect();
        Ok(Self { values })
    }

    fn integer(&self, order: u32) -> f64 {
        self.values[order as usize - 2]
    }

    fn at(&self, order: f64) -> Result<f64> {
        check_order(order)?;
        let hi = order.ceil() as u32;
        let lo = order.floor() as u32;
        let upper = self.integer(hi.max(2));
        Ok(if lo >= 2 { upper.max(self.integer(lo)) } else { upper })
    }
}

fn integer_order_rdp(q: f64, sigma: f64, alpha: u32, ln_fact: &[f64]) -> f64 {
    let a = alpha as usize;
    let two_var = 2.0 * sigma * sigma;
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let terms: Vec<f64> = (0..=a)
        .map(|k| {
            let kf = k as f64;
            let ln_binom = ln_fact[a] - ln_fact[k] - ln_fact[a - k];
            // At q = 1 only k = α survives; 0·ln(0) must read as 0.
            let miss = if k == a { 0.0 } else { (a - k) as f64 * ln_1mq };
            ln_binom + miss + kf * ln_q + (kf * kf - kf) / two_var
        })
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ln_a = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    let rdp = ln_a / (alpha - 1) as f64;
    if !rdp.is_finite() {
        log::warn!("RDP bound saturated at order {alpha} (q={q}, sigma={sigma})");
        return f64::INFINITY;
    }
    // Rounding in the log-sum can push the exact value 0 slightly negative.
    rdp.max(0.0)
}

/// Per-step RDP of the Poisson-subsampled Gaussian mechanism at `order`.
/// Returns `+∞` (with a logged warning) if the bound overflows.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, order: f64) -> Result<f64> {
    check_order(order)?;
    IntegerOrderTable::new(q, sigma, order.ceil() as u32)?.at(order)
}

/// RDP composes additively at a fixed order.
pub fn compose(per_step: f64, steps: u64) -> f64 {
    per_step * steps as f64
}

/// Converts `(α, ε_rdp)`-RDP into `(ε, δ)`-DP.
pub fn rdp_to_dp(order: f64, eps_rdp: f64, delta: f64) -> Result<f64> {
    if !(order > 1.0) {
        return Err(Error::invalid(format!("Rényi order must exceed 1, got {order}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(eps_rdp + (1.0 / delta).ln() / (order - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReport {
    pub epsilon: f64,
    pub best_order: f64,
}

/// Smallest ε over [`default_orders`].
pub fn epsilon_for(params: &AccountingParams) -> Result<EpsilonReport> {
    epsilon_over(params, &default_orders())
}

pub fn epsilon_over(params: &AccountingParams, orders: &[f64]) -> Result<EpsilonReport> {
    params.validate()?;
    let curve = RdpCurve::subsampled_gaussian(params.sample_rate, params.sigma, params.steps, orders)?;
    let (epsilon, best_order) = curve.best_epsilon(params.delta)?;
    Ok(EpsilonReport { epsilon, best_order })
}

/// Smallest noise multiplier (to relative tolerance [`SIGMA_REL_TOL`]) whose
/// ε does not exceed `target_eps`.
///
/// If even the bottom of [`SIGMA_BRACKET`] meets the target, that endpoint
/// is returned.
pub fn calibrate_sigma(target_eps: f64, delta: f64, q: f64, steps: u64) -> Result<f64> {
    if !(target_eps > 0.0) || !target_eps.is_finite() {
        return Err(Error::invalid(format!("target epsilon must be positive and finite, got {target_eps}")));
    }
    let orders = default_orders();
    let eps_at = |sigma: f64| -> Result<f64> {
        let p = AccountingParams {
            delta,
            sigma,
            sample_rate: q,
            steps,
        };
        Ok(epsilon_over(&p, &orders)?.epsilon)
    };

    let (mut lo, mut hi) = SIGMA_BRACKET;
    let eps_lo = eps_at(lo)?;
    if eps_lo <= target_eps {
        return Ok(lo);
    }
    let eps_hi = eps_at(hi)?;
    if eps_hi > target_eps {
        return Err(Error::CalibrationFailed(format!(
            "target epsilon {target_eps} unreachable in sigma bracket [{lo}, {hi}]: \
             epsilon({lo}) = {eps_lo:.6}, epsilon({hi}) = {eps_hi:.6}"
        )));
    }
    // Invariant: eps(lo) > target >= eps(hi).
    while hi - lo > hi * SIGMA_REL_TOL {
        let mid = 0.5 * (lo + hi);
        if eps_at(mid)? <= target_eps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
