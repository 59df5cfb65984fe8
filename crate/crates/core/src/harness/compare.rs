use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::keys::SettingKey;
use crate::dpsgd::RunRecord;
use crate::error::{Error, Result};
use crate::stats::{paired_ttest, PairedSample, TestReport};
use crate::TOOL_VERSION;

/// How measurements of the two methods are matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairBy {
    /// Run `j` of a setting against run `j` of the same setting.
    #[default]
    Run,
    /// Per-setting mean accuracy against per-setting mean accuracy.
    Setting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellComparison {
    pub setting: SettingKey,
    pub pairs: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method_a: String,
    pub method_b: String,
    pub pair_by: PairBy,
    pub pairs: usize,
    /// Pairs dropped because either side failed.
    pub dropped_failed: usize,
    pub report: TestReport,
    pub cells: Vec<CellComparison>,
    pub verdict: String,
    pub warnings: Vec<String>,
    pub tool_version: String,
}

type PairKey = (SettingKey, usize);

fn keyed<'a>(records: &'a [RunRecord], side: &str) -> Result<BTreeMap<PairKey, &'a RunRecord>> {
    let mut out = BTreeMap::new();
    for r in records {
        if out.insert((SettingKey::of(r), r.run_index), r).is_some() {
            return Err(Error::invalid(format!(
                "method {side} has two records for {} run {}",
                SettingKey::of(r),
                r.run_index
            )));
        }
    }
    Ok(out)
}

fn single_method(records: &[RunRecord], side: &str) -> Result<String> {
    let ids: BTreeSet<&str> = records.iter().map(|r| r.method_id.as_str()).collect();
    match ids.len() {
        1 => Ok(ids.into_iter().next().unwrap_or_default().to_string()),
        0 => Err(Error::invalid(format!("no records for method {side}"))),
        _ => Err(Error::invalid(format!("records for side {side} mix methods {ids:?}"))),
    }
}

/// Paired t-test and Cohen's d of method A against method B across every
/// matched key. Key sets must agree exactly; pairs where either run failed
/// are dropped and counted. Record order does not affect the result.
pub fn compare_methods(
    records_a: &[RunRecord],
    records_b: &[RunRecord],
    pair_by: PairBy,
    alpha: f64,
) -> Result<Comparison> {
    let method_a = single_method(records_a, "a")?;
    let method_b = single_method(records_b, "b")?;
    let a = keyed(records_a, "a")?;
    let b = keyed(records_b, "b")?;

    let mut orphans: Vec<String> = a
        .keys()
        .filter(|k| !b.contains_key(*k))
        .map(|(s, i)| format!("{method_a}: {s} run {i}"))
        .collect();
    orphans.extend(
        b.keys()
            .filter(|k| !a.contains_key(*k))
            .map(|(s, i)| format!("{method_b}: {s} run {i}")),
    );
    if !orphans.is_empty() {
        return Err(Error::Pairing { orphans });
    }

    let mut dropped_failed = 0;
    let mut per_setting: BTreeMap<SettingKey, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (key, ra) in &a {
        let rb = b[key];
        if !(ra.is_ok() && rb.is_ok()) {
            dropped_failed += 1;
            continue;
        }
        let e = per_setting.entry(key.0.clone()).or_default();
        e.0.push(ra.test_accuracy);
        e.1.push(rb.test_accuracy);
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let cells: Vec<CellComparison> = per_setting
        .iter()
        .map(|(setting, (xa, xb))| CellComparison {
            setting: setting.clone(),
            pairs: xa.len(),
            mean_a: mean(xa),
            mean_b: mean(xb),
            mean_diff: mean(xa) - mean(xb),
        })
        .collect();

    let (va, vb): (Vec<f64>, Vec<f64>) = match pair_by {
        PairBy::Run => per_setting.values().flat_map(|(xa, xb)| xa.iter().copied().zip(xb.iter().copied())).unzip(),
        PairBy::Setting => cells.iter().map(|c| (c.mean_a, c.mean_b)).unzip(),
    };
    let sample = PairedSample::new(va, vb)?;
    let report = paired_ttest(&sample, alpha)?;

    let mut warnings = Vec::new();
    if dropped_failed > 0 {
        warnings.push(format!("{dropped_failed} pair(s) dropped because a run failed"));
    }
    if let Some(req) = report.required_n {
        if req as usize > report.n {
            warnings.push(format!(
                "underpowered: the observed effect needs about {req} pairs for 80% power, have {}",
                report.n
            ));
        }
    }

    let verdict = format!(
        "{method_a} vs {method_b}: {} at alpha={} (t={:.4}, p={:.4e}, d={}, required_n={})",
        if report.significant { "significant" } else { "not significant" },
        alpha,
        report.t_stat,
        report.p_value,
        report.cohen_d.map_or("undefined".into(), |d| format!("{d:.4}")),
        report.required_n.map_or("unbounded".into(), |n| n.to_string()),
    );

    Ok(Comparison {
        method_a,
        method_b,
        pair_by,
        pairs: report.n,
        dropped_failed,
        report,
        cells,
        verdict,
        warnings,
        tool_version: TOOL_VERSION.to_string(),
    })
}

impl Comparison {
    pub fn to_markdown(&self) -> String {
        let r = &self.report;
        let mut s = String::new();
        let _ = writeln!(s, "# {} vs {}\n", self.method_a, self.method_b);
        let _ = writeln!(s, "**Verdict:** {}\n", self.verdict);
        let _ = writeln!(s, "| statistic | value |\n|---|---|");
        let _ = writeln!(s, "| pairs | {} |", r.n);
        let _ = writeln!(s, "| mean a / b | {:.6} / {:.6} |", r.mu1, r.mu2);
        let _ = writeln!(s, "| std a / b | {:.6} / {:.6} |", r.sigma1, r.sigma2);
        let _ = writeln!(s, "| mean diff | {:.6} |", r.mu_d);
        let _ = writeln!(s, "| t | {:.6} |", r.t_stat);
        let _ = writeln!(s, "| p | {:.6e} |", r.p_value);
        let _ = writeln!(s, "| Cohen's d | {} |", r.cohen_d.map_or("undefined".into(), |d| format!("{d:.6}")));
        let _ = writeln!(s, "| required n | {} |", r.required_n.map_or("unbounded".into(), |n| n.to_string()));
        let _ = writeln!(s, "\n## Per setting\n\n| setting | pairs | mean a | mean b | diff |\n|---|---|---|---|---|");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "| {} | {} | {:.6} | {:.6} | {:+.6} |",
                c.setting, c.pairs, c.mean_a, c.mean_b, c.mean_diff
            );
        }
        if !self.warnings.is_empty() {
            let _ = writeln!(s, "\n## Warnings\n");
            for w in &self.warnings {
                let _ = writeln!(s, "- {w}");
            }
        }
        let _ = writeln!(s, "\n_{}_", self.tool_version);
        s
    }
}
