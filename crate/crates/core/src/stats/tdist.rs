use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Degrees of freedom above which the normal limit replaces Student's t.
pub const NORMAL_APPROX_DF: u64 = 1_000_000;

/// Two-sided tail probability `P(|T| ≥ |t|)` for Student's t with `df`
/// degrees of freedom.
///
/// Uses `P(|T| ≥ |t|) = I_x(df/2, 1/2)` with `x = df / (df + t²)`, where
/// `I_x` is the regularized incomplete beta function (continued-fraction
/// evaluation). Infinite `t` gives 0.
pub fn t_tail_probability(t: f64, df: u64) -> Result<f64> {
    if df == 0 {
        return Err(Error::invalid("degrees of freedom must be at least 1"));
    }
    if t.is_nan() {
        return Err(Error::invalid("t statistic is NaN"));
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let p = if df > NORMAL_APPROX_DF {
        erfc(t.abs() / std::f64::consts::SQRT_2)
    } else {
        let v = df as f64;
        let t2 = t * t;
        // For large |t| the ratio v/(v+t²) loses precision near 1; the
        // complementary form keeps small tails accurate.
        let x = v / (v + t2);
        if x < 0.5 {
            beta_reg(v / 2.0, 0.5, x)
        } else {
            1.0 - beta_reg(0.5, v / 2.0, t2 / (v + t2))
        }
    };
    Ok(p.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Closed forms: df=1 is Cauchy, df=2 has F(t) = ½(1 + t/√(2+t²)).
    fn cauchy_two_sided(t: f64) -> f64 {
        2.0 * (0.5 - t.abs().atan() / std::f64::consts::PI)
    }

    fn df2_two_sided(t: f64) -> f64 {
        let t = t.abs();
        1.0 - t / (2.0 + t * t).sqrt()
    }

    #[test]
    fn matches_closed_forms() {
        for i in 0..=400 {
            let t = i as f64 * 0.05;
            let p1 = t_tail_probability(t, 1).unwrap();
            let p2 = t_tail_probability(t, 2).unwrap();
            assert!((p1 - cauchy_two_sided(t)).abs() <= 1e-10, "df=1 t={t}");
            assert!((p2 - df2_two_sided(t)).abs() <= 1e-10, "df=2 t={t}");
        }
    }

    #[test]
    fn named_examples() {
        assert_eq!(t_tail_probability(0.0, 7).unwrap(), 1.0);
        assert!((t_tail_probability(1.0, 1).unwrap() - 0.5).abs() < 1e-12);
        let p = t_tail_probability(5.0, 2).unwrap();
        assert!((p - 0.037_749_551_350_623_7).abs() < 1e-10, "{p}");
        assert_eq!(t_tail_probability(f64::INFINITY, 3).unwrap(), 0.0);
    }

    #[test]
    fn zero_df_rejected() {
        assert!(matches!(t_tail_probability(1.0, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn large_df_approaches_normal() {
        // 2·(1 − Φ(1.959963984540054)) = 0.05
        let p = t_tail_probability(1.959_963_984_540_054, 5_000_000).unwrap();
        assert!((p - 0.05).abs() < 1e-9);
        let p_close = t_tail_probability(1.959_963_984_540_054, NORMAL_APPROX_DF).unwrap();
        assert!((p_close - 0.05).abs() < 1e-6);
    }
}
