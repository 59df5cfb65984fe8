use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dpsgd::RunRecord;
use crate::float_serde;

/// One experimental setting: dataset, architecture and privacy budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingKey {
    pub dataset_id: String,
    pub layout: String,
    #[serde(with = "float_serde")]
    pub epsilon: f64,
}

impl SettingKey {
    pub fn of(r: &RunRecord) -> Self {
        Self {
            dataset_id: r.dataset_id.clone(),
            layout: r.layout.clone(),
            epsilon: r.epsilon,
        }
    }
}

impl Eq for SettingKey {}

impl Ord for SettingKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dataset_id
            .cmp(&other.dataset_id)
            .then_with(|| self.layout.cmp(&other.layout))
            .then_with(|| self.epsilon.total_cmp(&other.epsilon))
    }
}

impl PartialOrd for SettingKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for SettingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} eps={}", self.dataset_id, self.layout, fmt_eps(self.epsilon))
    }
}

/// A (method, setting) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub method_id: String,
    pub setting: SettingKey,
}

impl CellKey {
    pub fn of(r: &RunRecord) -> Self {
        Self {
            method_id: r.method_id.clone(),
            setting: SettingKey::of(r),
        }
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} @ {}", self.method_id, self.setting)
    }
}

pub(crate) fn fmt_eps(eps: f64) -> String {
    if eps.is_infinite() {
        "inf".into()
    } else {
        format!("{eps}")
    }
}
