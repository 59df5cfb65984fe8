use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dpsgd::{GradClipPolicy, ModelLayout, SeedPolicy};
use crate::error::{Error, Result};
use crate::float_serde;

/// Training regime of a setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    #[default]
    FromScratch,
    FineTune,
}

/// A method's hyperparameters, shared across every setting of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method_id: String,
    pub learning_rate: f64,
    pub batch_target: usize,
    pub steps: u64,
    pub clip: GradClipPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub dataset_id: String,
    pub layout: ModelLayout,
    /// Target budget; `"inf"` trains without noise.
    #[serde(with = "float_serde")]
    pub epsilon: f64,
    #[serde(default)]
    pub regime: Regime,
}

fn default_runs() -> usize {
    3
}

fn default_alpha() -> f64 {
    0.05
}

fn default_delta() -> f64 {
    1e-5
}

fn default_test_fraction() -> f64 {
    0.2
}

/// Methods × settings × `runs_per_cell` seeded runs. Every method runs on
/// the same settings grid so results can be paired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub methods: Vec<MethodSpec>,
    pub settings: Vec<Setting>,
    #[serde(default = "default_runs")]
    pub runs_per_cell: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed_policy: SeedPolicy,
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.settings.is_empty() {
            return Err(Error::invalid("manifest needs at least one method and one setting"));
        }
        if self.runs_per_cell == 0 {
            return Err(Error::invalid("runs_per_cell must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        let ids: BTreeSet<_> = self.methods.iter().map(|m| &m.method_id).collect();
        if ids.len() != self.methods.len() {
            return Err(Error::invalid("method ids must be unique"));
        }
        for s in &self.settings {
            if !(s.epsilon > 0.0) {
                return Err(Error::invalid(format!("setting epsilon must be positive, got {}", s.epsilon)));
            }
            s.layout.validate()?;
        }
        Ok(())
    }

    pub fn total_runs(&self) -> usize {
        self.methods.len() * self.settings.len() * self.runs_per_cell
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_defaults() {
        let m: ExperimentManifest = serde_json::from_str(
            r#"{
                "methods": [{"method_id": "dpsgd", "learning_rate": 0.5, "batch_target": 64,
                             "steps": 100, "clip": {"kind": "basic", "clip_bound": 1.0}}],
                "settings": [{"dataset_id": "blobs", "layout": "lr(20->2)", "epsilon": 8},
                             {"dataset_id": "blobs", "layout": "lr(20->2)", "epsilon": "inf"}]
            }"#,
        )
        .unwrap();
        m.validate().unwrap();
        assert_eq!(m.runs_per_cell, 3);
        assert_eq!(m.alpha, 0.05);
        assert_eq!(m.settings[1].epsilon, f64::INFINITY);
        assert_eq!(m.seed_policy, SeedPolicy::FreshEntropy);
        assert_eq!(m.total_runs(), 6);
    }

    #[test]
    fn rejects_duplicate_methods() {
        let method = MethodSpec {
            method_id: "a".into(),
            learning_rate: 0.1,
            batch_target: 8,
            steps: 1,
            clip: GradClipPolicy::None,
        };
        let m = ExperimentManifest {
            methods: vec![method.clone(), method],
            settings: vec![Setting {
                dataset_id: "blobs".into(),
                layout: ModelLayout::logistic(20, 2),
                epsilon: f64::INFINITY,
                regime: Regime::FromScratch,
            }],
            runs_per_cell: 3,
            alpha: 0.05,
            delta: 1e-5,
            test_fraction: 0.2,
            seed_policy: SeedPolicy::FreshEntropy,
        };
        assert!(m.validate().is_err());
    }
}
