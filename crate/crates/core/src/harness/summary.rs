use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::keys::{fmt_eps, CellKey};
use crate::dpsgd::RunRecord;
use crate::error::{Error, Result};
use crate::stats::raw_summary;

/// Spread of test accuracy across the seeds of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariabilitySummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub min: f64,
    /// Population deviation.
    pub std: f64,
    pub max_minus_min: f64,
}

impl VariabilitySummary {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let (mean, std) = raw_summary(values)?;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let (min, max) = (sorted[0], sorted[n - 1]);
        Ok(Self {
            n,
            mean,
            median,
            max,
            min,
            std,
            max_minus_min: max - min,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: CellKey,
    pub summary: VariabilitySummary,
}

/// Per-cell test-accuracy summaries in cell order. Failed runs are left
/// out; cells with no successful run are dropped with a warning.
pub fn summarize(records: &[RunRecord]) -> Vec<CellSummary> {
    let mut groups: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
    for r in records {
        let acc = groups.entry(CellKey::of(r)).or_default();
        if r.is_ok() {
            acc.push(r.test_accuracy);
        }
    }
    groups
        .into_iter()
        .filter_map(|(cell, values)| match VariabilitySummary::from_values(&values) {
            Ok(summary) => Some(CellSummary { cell, summary }),
            Err(_) => {
                log::warn!("cell {cell} has no successful runs; excluded from summary");
                None
            }
        })
        .collect()
}

pub fn write_summary_csv(path: &Path, cells: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method", "dataset", "epsilon", "n", "mean", "median", "max", "min", "std", "max_minus_min", "layout",
    ])?;
    for c in cells {
        let s = &c.summary;
        w.write_record([
            c.cell.method_id.clone(),
            c.cell.setting.dataset_id.clone(),
            fmt_eps(c.cell.setting.epsilon),
            s.n.to_string(),
            s.mean.to_string(),
            s.median.to_string(),
            s.max.to_string(),
            s.min.to_string(),
            s.std.to_string(),
            s.max_minus_min.to_string(),
            c.cell.setting.layout.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_values() {
        let s = VariabilitySummary::from_values(&[0.5, 0.7]).unwrap();
        assert!((s.mean - 0.6).abs() < 1e-15);
        assert!((s.median - 0.6).abs() < 1e-15);
        assert!((s.max_minus_min - 0.2).abs() < 1e-15);
        assert!((s.std - 0.1).abs() < 1e-15);
    }

    #[test]
    fn constant_values() {
        let s = VariabilitySummary::from_values(&[0.8; 5]).unwrap();
        assert_eq!((s.std, s.max_minus_min, s.median), (0.0, 0.0, 0.8));
    }

    #[test]
    fn odd_median_and_ordering() {
        let s = VariabilitySummary::from_values(&[0.9, 0.1, 0.4]).unwrap();
        assert_eq!(s.median, 0.4);
        assert!(s.min <= s.median && s.median <= s.max);
        assert!(VariabilitySummary::from_values(&[]).is_err());
    }
}
