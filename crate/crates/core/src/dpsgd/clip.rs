use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-example gradient clipping strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GradClipPolicy {
    None,
    /// `g · min(1, C/‖g‖)`
    Basic { clip_bound: f64 },
    /// `g / (‖g‖ + γ)`
    Auto { gamma: f64 },
}

impl GradClipPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GradClipPolicy::Basic { clip_bound } if !(clip_bound > 0.0) => {
                Err(Error::Config(format!("basic clipping needs C > 0, got {clip_bound}")))
            }
            GradClipPolicy::Auto { gamma } if !(gamma >= 0.0) || !gamma.is_finite() => {
                Err(Error::Config(format!("auto clipping needs γ ≥ 0, got {gamma}")))
            }
            _ => Ok(()),
        }
    }

    /// L2 sensitivity of one clipped gradient; `None` when unbounded.
    pub fn sensitivity(&self) -> Option<f64> {
        match *self {
            GradClipPolicy::None => None,
            GradClipPolicy::Basic { clip_bound } => Some(clip_bound),
            GradClipPolicy::Auto { .. } => Some(1.0),
        }
    }

    pub fn apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        match *self {
            GradClipPolicy::None => Ok(g.to_vec()),
            GradClipPolicy::Basic { clip_bound } => Ok(clip_basic(g, clip_bound)),
            GradClipPolicy::Auto { gamma } => clip_auto(g, gamma),
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            GradClipPolicy::None => "none".into(),
            GradClipPolicy::Basic { clip_bound } => format!("basic(C={clip_bound})"),
            GradClipPolicy::Auto { gamma } => format!("auto(gamma={gamma})"),
        }
    }
}

pub fn l2_norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales `g` onto the ball of radius `c` when it lies outside; vectors
/// already inside are returned unchanged.
pub fn clip_basic(g: &[f64], c: f64) -> Vec<f64> {
    let norm = l2_norm(g);
    if norm <= c {
        return g.to_vec();
    }
    let mut out: Vec<f64> = g.iter().map(|x| x * c / norm).collect();
    // Rounding can leave the product a few ulps above c.
    let after = l2_norm(&out);
    if after > c {
        let fix = c / after;
        out.iter_mut().for_each(|x| *x *= fix);
    }
    out
}

/// Normalizes `g` by `‖g‖ + γ`.
pub fn clip_auto(g: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma >= 0.0) {
        return Err(Error::invalid(format!("gamma must be non-negative, got {gamma}")));
    }
    let denom = l2_norm(g) + gamma;
    if denom == 0.0 {
        return Err(Error::invalid("auto clipping of a zero gradient with gamma = 0"));
    }
    Ok(g.iter().map(|x| x / denom).collect())
}
