//! Reproducibility checklist: five generalizability and five reliability
//! items, graded from an experiment's manifest, records and comparison,
//! plus declared answers for what the data cannot show.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dpsgd::RunRecord;
use crate::error::{Error, Result};
use crate::harness::{CellKey, ExperimentManifest};
use crate::stats::TestReport;
use crate::TOOL_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    Generalizability,
    Reliability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemId {
    Settings,
    Datasets,
    Architectures,
    PrivacyRange,
    Combinations,
    OpenSource,
    MultipleRuns,
    StatisticalSignificance,
    HyperparameterAccounting,
    Ablation,
}

impl ItemId {
    pub const ALL: [ItemId; 10] = [
        ItemId::Settings,
        ItemId::Datasets,
        ItemId::Architectures,
        ItemId::PrivacyRange,
        ItemId::Combinations,
        ItemId::OpenSource,
        ItemId::MultipleRuns,
        ItemId::StatisticalSignificance,
        ItemId::HyperparameterAccounting,
        ItemId::Ablation,
    ];

    pub fn axis(self) -> Axis {
        match self {
            ItemId::Settings
            | ItemId::Datasets
            | ItemId::Architectures
            | ItemId::PrivacyRange
            | ItemId::Combinations => Axis::Generalizability,
            _ => Axis::Reliability,
        }
    }

    pub fn question(self) -> &'static str {
        match self {
            ItemId::Settings => "Is the method evaluated in every training regime it applies to (from scratch, fine-tuning)?",
            ItemId::Datasets => "Is the method evaluated on more than one dataset?",
            ItemId::Architectures => "Is the method evaluated on more than one model architecture?",
            ItemId::PrivacyRange => "Is the method evaluated across a range of privacy budgets?",
            ItemId::Combinations => "Is combining the method with other techniques evaluated or discussed?",
            ItemId::OpenSource => "Is the code released?",
            ItemId::MultipleRuns => "Are results aggregated over multiple independent runs with a measure of spread?",
            ItemId::StatisticalSignificance => "Is the improvement over the baseline statistically significant?",
            ItemId::HyperparameterAccounting => "Is the cost of hyperparameter search accounted for?",
            ItemId::Ablation => "Do ablations attribute the improvement to the method itself?",
        }
    }

    fn declared(self) -> bool {
        matches!(
            self,
            ItemId::Combinations | ItemId::OpenSource | ItemId::HyperparameterAccounting | ItemId::Ablation
        )
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned));
        f.write_str(s.as_deref().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecklistItem {
    pub id: ItemId,
    pub axis: Axis,
    pub question: String,
    pub status: ItemStatus,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeclaredAnswer {
    pub status: ItemStatus,
    #[serde(default)]
    pub evidence: String,
}

/// Human answers for the items data cannot decide.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Declarations {
    pub open_source: Option<DeclaredAnswer>,
    pub combinations: Option<DeclaredAnswer>,
    pub ablation: Option<DeclaredAnswer>,
    pub hyperparameter_accounting: Option<DeclaredAnswer>,
    /// Whether the method could apply to more than one training regime.
    #[serde(default)]
    pub multi_regime_applicable: bool,
}

impl Declarations {
    fn get(&self, id: ItemId) -> Option<&DeclaredAnswer> {
        match id {
            ItemId::OpenSource => self.open_source.as_ref(),
            ItemId::Combinations => self.combinations.as_ref(),
            ItemId::Ablation => self.ablation.as_ref(),
            ItemId::HyperparameterAccounting => self.hyperparameter_accounting.as_ref(),
            _ => None,
        }
    }
}

/// Pass thresholds for the data-derived items.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub min_datasets: usize,
    pub min_architectures: usize,
    pub min_regimes: usize,
    /// Distinct finite ε values required...
    pub min_epsilons: usize,
    /// ...including one at or below this...
    pub low_epsilon: f64,
    /// ...and one at or above this.
    pub high_epsilon: f64,
    pub min_runs: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            min_datasets: 2,
            min_architectures: 2,
            min_regimes: 2,
            min_epsilons: 3,
            low_epsilon: 1.0,
            high_epsilon: 8.0,
            min_runs: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecklistReport {
    pub items: Vec<ChecklistItem>,
    pub generalizability_score: usize,
    pub reliability_score: usize,
    /// SHA-256 of the manifest's JSON encoding.
    pub manifest_fingerprint: String,
    pub tool_version: String,
}

fn pass_if(ok: bool) -> ItemStatus {
    if ok {
        ItemStatus::Pass
    } else {
        ItemStatus::Fail
    }
}

pub fn manifest_fingerprint(manifest: &ExperimentManifest) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(manifest)?)))
}

/// Grades every item. Declared items must all be answered.
pub fn grade(
    manifest: &ExperimentManifest,
    records: &[RunRecord],
    comparison: &TestReport,
    declared: &Declarations,
    thresholds: &Thresholds,
) -> Result<ChecklistReport> {
    let missing: Vec<String> = ItemId::ALL
        .iter()
        .filter(|id| id.declared() && declared.get(**id).is_none())
        .map(|id| id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteGrading { missing });
    }

    let datasets: BTreeSet<&str> = manifest
        .settings
        .iter()
        .map(|s| s.dataset_id.as_str())
        .chain(records.iter().map(|r| r.dataset_id.as_str()))
        .collect();
    let layouts: BTreeSet<String> = manifest
        .settings
        .iter()
        .map(|s| s.layout.to_string())
        .chain(records.iter().map(|r| r.layout.clone()))
        .collect();
    let mut epsilons: Vec<f64> = manifest
        .settings
        .iter()
        .map(|s| s.epsilon)
        .chain(records.iter().map(|r| r.epsilon))
        .filter(|e| e.is_finite())
        .collect();
    epsilons.sort_by(f64::total_cmp);
    epsilons.dedup();
    let regimes: BTreeSet<_> = manifest.settings.iter().map(|s| s.regime).collect();

    let mut per_cell: BTreeMap<CellKey, usize> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        *per_cell.entry(CellKey::of(r)).or_default() += 1;
    }
    let runs = per_cell.values().copied().min().unwrap_or(manifest.runs_per_cell);

    let t = thresholds;
    let grade_item = |id: ItemId| -> (ItemStatus, String) {
        match id {
            ItemId::Settings => {
                if declared.multi_regime_applicable {
                    (pass_if(regimes.len() >= t.min_regimes), format!("{} regime(s): {regimes:?}", regimes.len()))
                } else {
                    (ItemStatus::NotApplicable, "method declared specific to one regime".into())
                }
            }
            ItemId::Datasets => (
                pass_if(datasets.len() >= t.min_datasets),
                format!("{} dataset(s), need {}", datasets.len(), t.min_datasets),
            ),
            ItemId::Architectures => (
                pass_if(layouts.len() >= t.min_architectures),
                format!("{} architecture(s), need {}", layouts.len(), t.min_architectures),
            ),
            ItemId::PrivacyRange => {
                let low = epsilons.first().is_some_and(|&e| e <= t.low_epsilon);
                let high = epsilons.last().is_some_and(|&e| e >= t.high_epsilon);
                (
                    pass_if(epsilons.len() >= t.min_epsilons && low && high),
                    format!(
                        "epsilons {epsilons:?}; need {} values spanning <= {} and >= {}",
                        t.min_epsilons, t.low_epsilon, t.high_epsilon
                    ),
                )
            }
            ItemId::MultipleRuns => (
                pass_if(runs >= t.min_runs),
                format!("{runs} run(s) per cell, need {}", t.min_runs),
            ),
            ItemId::StatisticalSignificance => (
                pass_if(comparison.significant),
                format!(
                    "paired t-test p = {:.4e} at alpha = {} over {} pairs",
                    comparison.p_value, comparison.alpha, comparison.n
                ),
            ),
            _ => {
                let a = declared.get(id).expect("checked above");
                let evidence = if a.evidence.is_empty() { "declared".to_string() } else { format!("declared: {}", a.evidence) };
                (a.status, evidence)
            }
        }
    };

    let items: Vec<ChecklistItem> = ItemId::ALL
        .iter()
        .map(|&id| {
            let (status, evidence) = grade_item(id);
            ChecklistItem {
                id,
                axis: id.axis(),
                question: id.question().to_string(),
                status,
                evidence,
            }
        })
        .collect();
    let score = |axis| items.iter().filter(|i| i.axis == axis && i.status == ItemStatus::Pass).count();
    Ok(ChecklistReport {
        generalizability_score: score(Axis::Generalizability),
        reliability_score: score(Axis::Reliability),
        items,
        manifest_fingerprint: manifest_fingerprint(manifest)?,
        tool_version: TOOL_VERSION.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Markdown,
    Json,
}

pub fn render_report(report: &ChecklistReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Markdown => Ok(render_markdown(report)),
    }
}

fn render_markdown(report: &ChecklistReport) -> String {
    let mark = |s: ItemStatus| match s {
        ItemStatus::Pass => "✓",
        ItemStatus::Fail => "✗",
        ItemStatus::NotApplicable => "n/a",
    };
    let mut s = String::from("# Reproducibility checklist\n\n| axis | item | status | evidence |\n|---|---|---|---|\n");
    for i in &report.items {
        let _ = writeln!(s, "| {:?} | {} | {} | {} |", i.axis, i.id, mark(i.status), i.evidence.replace('|', "/"));
    }
    let _ = writeln!(
        s,
        "\nGeneralizability: {}/5  \nReliability: {}/5\n\nmanifest `{}` · {}",
        report.generalizability_score, report.reliability_score, report.manifest_fingerprint, report.tool_version
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_items_per_axis() {
        let g = ItemId::ALL.iter().filter(|i| i.axis() == Axis::Generalizability).count();
        assert_eq!(g, 5);
        assert_eq!(ItemId::ALL.len(), 10);
        assert_eq!(ItemId::PrivacyRange.to_string(), "privacy_range");
    }
}
