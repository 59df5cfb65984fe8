use rand_distr::{Distribution, StandardNormal};

use super::{paired_ttest, PairedSample};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::rng;

/// Fraction of `samples` simulated paired samples of size `n` on which the
/// two-sided paired t-test rejects at `alpha`.
///
/// Each pair is bivariate normal with unit variances, correlation `rho`
/// and mean gap `effect` (so `effect` is Cohen's d of the population).
/// Sample `i` draws from stream `i` of `seed`.
pub fn simulated_power(
    effect: f64,
    n: usize,
    alpha: f64,
    rho: f64,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<f64> {
    if n < 2 || samples == 0 {
        return Err(Error::invalid("power study needs n ≥ 2 and at least one sample"));
    }
    if !(0.0..1.0).contains(&rho) || !effect.is_finite() {
        return Err(Error::invalid(format!("need finite effect and rho in [0, 1), got {effect}, {rho}")));
    }
    let tail = (1.0 - rho * rho).sqrt();
    let rejected = map_indexed(samples, exec, |i| -> Result<bool> {
        let mut r = rng::stream(seed, i as u64);
        let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let z1: f64 = StandardNormal.sample(&mut r);
            let z2: f64 = StandardNormal.sample(&mut r);
            a.push(effect + z1);
            b.push(rho * z1 + tail * z2);
        }
        Ok(paired_ttest(&PairedSample::new(a, b)?, alpha)?.significant)
    });
    let mut hits = 0usize;
    for r in rejected {
        hits += usize::from(r?);
    }
    Ok(hits as f64 / samples as f64)
}
