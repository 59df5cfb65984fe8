use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dprelia::accountant::{calibrate_sigma, epsilon_for, AccountingParams};
use dprelia::checklist::{grade, render_report, Declarations, ReportFormat, Thresholds};
use dprelia::dpsgd::{load_dataset, train, BlobSpec, GradClipPolicy, ModelLayout, RunRecord, SeedPolicy, TrainConfig};
use dprelia::exec::Execution;
use dprelia::harness::{
    compare_methods, read_runs, run_sweep, summarize, write_json, write_summary_csv, CellKey, ExperimentManifest,
    JsonlWriter, PairBy, SweepOptions,
};
use dprelia::seedhack::{
    pool_from_records, render_markdown, simulate_with, synthetic_pool, variance_effect_sweep_with, BaselineDraw,
    SeedHackConfig, SelectionMode, TtestRule,
};
use dprelia::stats::TestReport;
use dprelia::{rng, Error, Result, TOOL_VERSION};
use serde::Serialize;
use serde_json::{json, Value};

use crate::*;

pub const WORKERS_ENV: &str = "DPRELIA_WORKERS";

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::Summarize(a) => summarize_cmd(a),
        Command::Compare(a) => compare(a),
        Command::Seedhack(a) => seedhack(a),
        Command::Account(a) => account(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Checklist(a) => checklist(a),
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

/// Writes to stdout; a reader that went away (`| head`) is not an error.
fn print_out(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
            path: "<stdout>".into(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn emit<T: Serialize + ?Sized>(value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    print_out(&text)
}

/// `<stem>.config.json` next to an output file.
fn echo_path(out: &Path) -> PathBuf {
    out.with_extension("config.json")
}

/// Records the full resolved parameters of an invocation beside its output.
fn write_echo(path: &Path, command: &str, resolved: Value) -> Result<()> {
    write_json(
        path,
        &json!({
            "tool_version": TOOL_VERSION,
            "command": command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "resolved": resolved,
        }),
    )
}

fn seed_value(seed: SeedArg) -> u64 {
    match seed {
        SeedArg::Auto => rng::entropy_seed(),
        SeedArg::Fixed(s) => s,
    }
}

pub fn parse_clip(s: &str) -> Result<GradClipPolicy> {
    let bad = || invalid(format!("bad clip policy {s:?}; expected none, basic:<C> or auto:<gamma>"));
    let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
    let num = || arg.trim().parse::<f64>().map_err(|_| bad());
    let policy = match kind.trim() {
        "none" if arg.is_empty() => GradClipPolicy::None,
        "basic" => GradClipPolicy::Basic { clip_bound: num()? },
        "auto" => GradClipPolicy::Auto { gamma: if arg.is_empty() { 0.01 } else { num()? } },
        _ => return Err(bad()),
    };
    policy.validate()?;
    Ok(policy)
}

/// `lr`, `mlp:<hidden>`, or a full layout such as `mlp(20-16->2)`.
pub fn parse_model(s: &str, input_dim: usize, num_classes: usize) -> Result<ModelLayout> {
    let classes = num_classes.max(2);
    let layout = match s.trim() {
        "lr" => ModelLayout::logistic(input_dim, classes),
        other => match other.strip_prefix("mlp:") {
            Some(h) => ModelLayout::mlp(
                input_dim,
                h.trim().parse().map_err(|_| invalid(format!("bad hidden width in {s:?}")))?,
                classes,
            ),
            None => ModelLayout::parse(other)?,
        },
    };
    layout.validate()?;
    Ok(layout)
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let spec = BlobSpec {
        n: a.n,
        dims: a.dims,
        classes: a.classes,
        separation: a.separation,
        seed: a.seed,
    };
    let data = spec.generate()?;
    data.write_csv(&a.out)?;
    let summary = json!({
        "dataset_id": spec.id(),
        "path": a.out,
        "n": data.len(),
        "dims": data.dim(),
        "classes": data.num_classes(),
        "tool_version": TOOL_VERSION,
    });
    write_echo(&echo_path(&a.out), "gen-data", summary.clone())?;
    emit(&summary)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let data = load_dataset(&a.dataset)?;
    let (train_set, test_set) = data.split(a.test_fraction)?;
    let layout = parse_model(&a.model, data.dim(), data.num_classes())?;
    let clip = parse_clip(&a.clip)?;
    let q = a.batch as f64 / train_set.len() as f64;

    let sigma = match (a.sigma, a.epsilon) {
        (Some(s), _) => s,
        (None, Some(eps)) => {
            return Err(Error::Config(format!(
                "epsilon {eps} needs an explicit noise multiplier: run `dprelia calibrate --epsilon {eps} --q {q} \
                 --steps {} --delta {}` and pass the result as --sigma",
                a.steps, a.delta
            )))
        }
        (None, None) => 0.0,
    };
    if let Some(eps) = a.epsilon {
        if !(sigma > 0.0) {
            return Err(Error::Config(format!(
                "a finite epsilon ({eps}) needs sigma > 0; see `dprelia calibrate`"
            )));
        }
        let spent = epsilon_for(&AccountingParams {
            delta: a.delta,
            sigma,
            sample_rate: q,
            steps: a.steps,
        })?
        .epsilon;
        if spent > eps * (1.0 + 1e-4) {
            return Err(Error::Config(format!(
                "sigma {sigma} spends epsilon {spent:.6} > target {eps}; run `dprelia calibrate` for a sufficient sigma"
            )));
        }
    }

    let config = TrainConfig {
        method_id: a.method_id,
        dataset_id: a.dataset,
        layout,
        learning_rate: a.lr,
        batch_target: a.batch,
        steps: a.steps,
        clip,
        sigma,
        delta: a.delta,
        target_epsilon: a.epsilon,
        test_fraction: a.test_fraction,
        seed_policy: match a.seed {
            SeedArg::Auto => SeedPolicy::FreshEntropy,
            SeedArg::Fixed(s) => SeedPolicy::Fixed(s),
        },
    };
    config.validate_for(&train_set)?;
    let seed = config.resolve_seed(a.unsafe_fixed_seed).map_err(|e| match e {
        Error::Config(_) => Error::Config(
            "fixed seed on a private run makes the noise predictable; pass --unsafe-fixed-seed to accept a run \
             without a privacy guarantee, or use --seed auto"
                .into(),
        ),
        e => e,
    })?;
    let record = train(&config, &train_set, &test_set, seed)?;

    if let Some(out) = &a.out {
        JsonlWriter::create(out)?.append(&record)?;
        write_echo(&echo_path(out), "train", json!({ "config": config, "seed": seed }))?;
    }
    emit(&record)
}

fn workers(flag: Option<usize>) -> Result<Execution> {
    let from_env = match std::env::var(WORKERS_ENV) {
        Ok(v) if !v.trim().is_empty() => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| invalid(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?,
        ),
        _ => None,
    };
    match flag.or(from_env) {
        Some(0) => Err(invalid("worker count must be at least 1")),
        Some(k) => Ok(Execution::with_workers(k)),
        None => Ok(Execution::Parallel),
    }
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut manifest = ExperimentManifest::load(&a.manifest)?;
    if let Some(n) = a.runs {
        manifest.runs_per_cell = n;
    }
    if let Some(master) = a.master_seed {
        manifest.seed_policy = SeedPolicy::Fixed(master);
    }
    let exec = workers(a.workers)?;
    let replay = a.replay.as_deref().map(read_runs).transpose()?;

    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let runs_path = a.out.join("runs.jsonl");
    let outcome = run_sweep(
        &manifest,
        &SweepOptions {
            exec,
            out: Some(runs_path.clone()),
            replay,
            allow_unsafe_seed: a.unsafe_fixed_seed,
        },
    )?;
    // Rewrite in run_id order so the file does not depend on completion order.
    let sorted = JsonlWriter::create(&runs_path)?;
    for r in &outcome.records {
        sorted.append(r)?;
    }

    let cells: Vec<Value> = outcome
        .cells
        .iter()
        .map(|c| {
            json!({
                "method_id": c.method_id,
                "setting_index": c.setting_index,
                "epsilon": eps_json(c.epsilon),
                "sigma": c.config.sigma,
                "sample_rate": c.sample_rate,
            })
        })
        .collect();
    write_echo(
        &a.out.join("sweep.config.json"),
        "sweep",
        json!({
            "manifest": manifest,
            "cells": outcome.cells,
            "workers": format!("{exec:?}"),
        }),
    )?;
    emit(&json!({
        "runs_path": runs_path,
        "records": outcome.records.len(),
        "failures": outcome.failures(),
        "cells": cells,
        "tool_version": TOOL_VERSION,
    }))
}

fn eps_json(eps: f64) -> Value {
    if eps.is_finite() {
        json!(eps)
    } else {
        json!("inf")
    }
}

fn summarize_cmd(a: SummarizeArgs) -> Result<()> {
    let records = read_runs(&a.runs)?;
    let cells = summarize(&records);
    if let Some(out) = &a.out {
        write_summary_csv(out, &cells)?;
        write_echo(&echo_path(out), "summarize", json!({ "runs": a.runs, "cells": cells.len() }))?;
    }
    emit(&json!({
        "runs": a.runs,
        "cells": cells,
        "tool_version": TOOL_VERSION,
    }))
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_runs(p)?);
    }
    Ok(out)
}

fn compare(a: CompareArgs) -> Result<()> {
    let records = load_all(&a.runs)?;
    let side = |m: &str| -> Vec<RunRecord> { records.iter().filter(|r| r.method_id == m).cloned().collect() };
    let pair_by = match a.pair_by {
        PairByArg::Run => PairBy::Run,
        PairByArg::Setting => PairBy::Setting,
    };
    let (ra, rb) = (side(&a.method_a), side(&a.method_b));
    for (m, rs) in [(&a.method_a, &ra), (&a.method_b, &rb)] {
        if rs.is_empty() {
            let known: std::collections::BTreeSet<&str> = records.iter().map(|r| r.method_id.as_str()).collect();
            return Err(invalid(format!("no records for method {m:?}; the runs contain {known:?}")));
        }
    }
    let cmp = compare_methods(&ra, &rb, pair_by, a.alpha)?;
    for w in &cmp.warnings {
        log::warn!("{w}");
    }
    if let Some(out) = &a.out {
        write_json(out, &cmp)?;
        let md = out.with_extension("md");
        std::fs::write(&md, cmp.to_markdown()).map_err(|e| Error::Io { path: md, source: e })?;
    }
    emit(&cmp)
}

fn parse_synthetic(s: &str) -> Result<(f64, f64, usize)> {
    let bad = || invalid(format!("--synthetic expects mean,std,size; got {s:?}"));
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [mean, std, size] = parts.as_slice() else {
        return Err(bad());
    };
    let (mean, std): (f64, f64) = (mean.parse().map_err(|_| bad())?, std.parse().map_err(|_| bad())?);
    if !mean.is_finite() || !(std >= 0.0) || !std.is_finite() {
        return Err(bad());
    }
    Ok((mean, std, size.parse().map_err(|_| bad())?))
}

fn seedhack(a: SeedhackArgs) -> Result<()> {
    let seed = seed_value(a.seed);
    let mut cfg = SeedHackConfig {
        pool_size: 0,
        subset_size: a.subset_size,
        top_k: a.top_k,
        baseline_k: a.top_k,
        trials: a.trials,
        alpha: a.alpha,
        mode: match a.mode {
            ModeArg::Honest => SelectionMode::Honest,
            ModeArg::CherryPick => SelectionMode::CherryPick,
        },
        ttest_rule: match a.ttest_rule {
            RuleArg::TwoSided => TtestRule::TwoSided,
            RuleArg::Superior => TtestRule::Superior,
        },
        baseline_draw: match a.baseline_draw {
            BaselineArg::Independent => BaselineDraw::Independent,
            BaselineArg::Disjoint => BaselineDraw::Disjoint,
        },
    };

    let (output, markdown) = if let Some(spec) = &a.synthetic {
        let (mean, std, size) = parse_synthetic(spec)?;
        let pool_seed = a.pool_seed.unwrap_or(seed);
        let pool = synthetic_pool(mean, std, size, pool_seed);
        cfg.pool_size = size;
        let result = simulate_with(&pool, &cfg, seed, Execution::Sequential)?;
        let md = result.to_markdown();
        let mut v = serde_json::to_value(&result)?;
        v["pool"] = json!({ "synthetic": { "mean": mean, "std": std, "size": size, "seed": pool_seed } });
        (v, md)
    } else {
        let path = a.runs.as_ref().ok_or_else(|| invalid("seedhack needs --synthetic or --runs"))?;
        let records: Vec<RunRecord> = read_runs(path)?
            .into_iter()
            .filter(|r| a.method.as_deref().is_none_or(|m| r.method_id == m))
            .collect();
        let mut cells: BTreeMap<CellKey, Vec<RunRecord>> = BTreeMap::new();
        for r in records {
            cells.entry(CellKey::of(&r)).or_default().push(r);
        }
        match cells.len() {
            0 => return Err(invalid(format!("no records in {} match", path.display()))),
            1 => {
                let (cell, recs) = cells.into_iter().next().expect("one cell");
                let pool = pool_from_records(&recs)?;
                cfg.pool_size = pool.len();
                let result = simulate_with(&pool, &cfg, seed, Execution::Sequential)?;
                let md = result.to_markdown();
                let mut v = serde_json::to_value(&result)?;
                v["pool"] = json!({ "cell": cell, "size": pool.len() });
                (v, md)
            }
            _ => {
                let mut pools: Vec<(f64, Vec<f64>)> = Vec::new();
                for (cell, recs) in &cells {
                    if pools.iter().any(|(e, _)| e.total_cmp(&cell.setting.epsilon).is_eq()) {
                        return Err(invalid(
                            "runs hold several cells with the same epsilon; narrow them with --method or split the file",
                        ));
                    }
                    pools.push((cell.setting.epsilon, pool_from_records(recs)?));
                }
                let results = variance_effect_sweep_with(&pools, &cfg, seed, Execution::Sequential)?;
                (json!({ "seed": seed, "results": results }), render_markdown(&results))
            }
        }
    };

    let mut output = output;
    output["config"] = serde_json::to_value(cfg)?;
    output["markdown"] = json!(markdown);
    output["tool_version"] = json!(TOOL_VERSION);
    if let Some(out) = &a.out {
        write_json(out, &output)?;
        let md = out.with_extension("md");
        std::fs::write(&md, &markdown).map_err(|e| Error::Io { path: md, source: e })?;
    }
    emit(&output)
}

fn account(a: AccountArgs) -> Result<()> {
    let params = AccountingParams {
        delta: a.delta,
        sigma: a.sigma,
        sample_rate: a.q,
        steps: a.steps,
    };
    let report = epsilon_for(&params)?;
    emit(&json!({
        "epsilon": report.epsilon,
        "best_order": report.best_order,
        "sigma": a.sigma,
        "q": a.q,
        "steps": a.steps,
        "delta": a.delta,
        "tool_version": TOOL_VERSION,
    }))
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let sigma = calibrate_sigma(a.epsilon, a.delta, a.q, a.steps)?;
    let report = epsilon_for(&AccountingParams {
        delta: a.delta,
        sigma,
        sample_rate: a.q,
        steps: a.steps,
    })?;
    emit(&json!({
        "epsilon": report.epsilon,
        "best_order": report.best_order,
        "sigma": sigma,
        "q": a.q,
        "steps": a.steps,
        "delta": a.delta,
        "target_epsilon": a.epsilon,
        "tool_version": TOOL_VERSION,
    }))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn checklist(a: ChecklistArgs) -> Result<()> {
    let manifest = ExperimentManifest::load(&a.manifest)?;
    let records = read_runs(&a.runs)?;
    let comparison: Value = read_json(&a.comparison)?;
    let report: TestReport = serde_json::from_value(comparison.get("report").cloned().unwrap_or(comparison))
        .map_err(|e| invalid(format!("{}: not a comparison or test report: {e}", a.comparison.display())))?;
    let declared: Declarations = read_json(&a.declarations)?;
    let thresholds: Thresholds = match &a.thresholds {
        Some(p) => read_json(p)?,
        None => Thresholds::default(),
    };
    let graded = grade(&manifest, &records, &report, &declared, &thresholds)?;
    let format = match a.format {
        FormatArg::Markdown => ReportFormat::Markdown,
        FormatArg::Json => ReportFormat::Json,
    };
    let text = render_report(&graded, format)?;
    if let Some(out) = &a.out {
        std::fs::write(out, &text).map_err(|e| Error::Io {
            path: out.clone(),
            source: e,
        })?;
    }
    print_out(&text)
}
