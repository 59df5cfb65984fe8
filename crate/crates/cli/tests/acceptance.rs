//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criteria that need the binary drive it as a subprocess.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use dprelia::accountant::{calibrate_sigma, epsilon_for, rdp_subsampled_gaussian, rdp_to_dp, AccountingParams};
use dprelia::dpsgd::{clip_auto, clip_basic, l2_norm, Example, GradClipPolicy, ModelLayout, ModelParams, RunRecord, SeedPolicy};
use dprelia::exec::Execution;
use dprelia::harness::{read_runs, run_sweep, summarize, ExperimentManifest, MethodSpec, Regime, Setting, SweepOptions};
use dprelia::rng;
use dprelia::seedhack::{simulate, synthetic_pool, SeedHackConfig, SelectionMode};
use dprelia::stats::{paired_ttest, required_runs, simulated_power, PairedSample};
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dprelia(args: &[&str]) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dprelia"))
        .args(args)
        .output()
        .map_err(|e| format!("spawn failed: {e}"))?;
    if !out.status.success() {
        return Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| format!("{args:?}: bad JSON: {e}"))
}

fn t_test_example() -> Outcome {
    let r = paired_ttest(&PairedSample::new(vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 1.0]).unwrap(), 0.05).unwrap();
    let closed_form = 1.0 - 5.0 / 27f64.sqrt();
    check(
        r.t_stat == 5.0 && (0.0377..=0.0378).contains(&r.p_value) && (r.p_value - closed_form).abs() < 1e-12,
        format!("t = {}, p = {:.6}", r.t_stat, r.p_value),
    )
}

fn honest_calibration() -> Outcome {
    let mut counts = Vec::new();
    for m in 0..20 {
        let seed = (1000 + m).to_string();
        let v = dprelia(&[
            "seedhack", "--synthetic", "0.7,0.03,500", "--mode", "honest", "--trials", "1000", "--alpha", "0.05",
            "--seed", &seed,
        ])?;
        counts.push(v["ttest_passes"].as_u64().ok_or("missing ttest_passes")?);
    }
    let inside = counts.iter().filter(|&&c| (29..=71).contains(&c)).count();
    check(inside >= 19, format!("{inside}/20 in [29, 71]: {counts:?}"))
}

fn cherry_pick_dominance() -> Outcome {
    let cfg = SeedHackConfig::standard(SelectionMode::CherryPick);
    let mut wins = 0;
    let mut pairs = Vec::new();
    for m in 0..20u64 {
        let pool = synthetic_pool(0.7, 0.02, 500, 2000 + m);
        let r = simulate(&pool, &cfg, 3000 + m).map_err(|e| e.to_string())?;
        wins += usize::from(r.std_test_passes > r.ttest_passes);
        pairs.push((r.std_test_passes, r.ttest_passes));
    }
    check(wins >= 18, format!("std > t-test in {wins}/20 (std, t): {pairs:?}"))
}

fn variability_ordering() -> Outcome {
    let dataset = "blobs:n=2000,dims=20,classes=2,sep=1.5,seed=1";
    let manifest = ExperimentManifest {
        methods: vec![MethodSpec {
            method_id: "dpsgd".into(),
            learning_rate: 0.5,
            batch_target: 4,
            steps: 2000,
            clip: GradClipPolicy::Basic { clip_bound: 1.0 },
        }],
        settings: [0.5, 8.0, f64::INFINITY]
            .iter()
            .map(|&epsilon| Setting {
                dataset_id: dataset.into(),
                layout: ModelLayout::logistic(20, 2),
                epsilon,
                regime: Regime::FromScratch,
            })
            .collect(),
        runs_per_cell: 30,
        alpha: 0.05,
        delta: 1e-5,
        test_fraction: 0.2,
        seed_policy: SeedPolicy::FreshEntropy,
    };
    let mut good = 0;
    let mut lines = Vec::new();
    for _ in 0..5 {
        let out = run_sweep(&manifest, &SweepOptions::default()).map_err(|e| e.to_string())?;
        if out.failures() > 0 {
            return Err(format!("{} failed runs", out.failures()));
        }
        let cells = summarize(&out.records);
        let std_at = |e: f64| cells.iter().find(|c| c.cell.setting.epsilon == e).map(|c| c.summary.std).unwrap();
        let (lo, mid, inf) = (std_at(0.5), std_at(8.0), std_at(f64::INFINITY));
        let ok = lo > mid && mid > 0.0 && mid >= inf && lo >= 1.5 * inf;
        good += usize::from(ok);
        lines.push(format!("{lo:.4}/{mid:.4}/{inf:.4}"));
    }
    check(good >= 4, format!("{good}/5 sweeps ordered; std at 0.5/8/inf: {}", lines.join(", ")))
}

fn accountant() -> Outcome {
    for a in 2..=64u32 {
        for sigma in [0.5, 1.0, 2.0, 5.0] {
            let got = rdp_subsampled_gaussian(1.0, sigma, a as f64).unwrap();
            let want = a as f64 / (2.0 * sigma * sigma);
            if (got - want).abs() > 1e-9 {
                return Err(format!("q=1 α={a} σ={sigma}: {got} vs {want}"));
            }
        }
    }
    let eps = |sigma, q, steps| epsilon_for(&AccountingParams { delta: 1e-5, sigma, sample_rate: q, steps }).unwrap().epsilon;
    for (q, steps) in [(0.01, 1000u64), (0.1, 100), (0.004, 5000)] {
        let e: Vec<f64> = (0..30).map(|i| eps(0.4 * 1.2f64.powi(i), q, steps)).collect();
        if e.windows(2).any(|w| w[1] >= w[0]) {
            return Err(format!("not decreasing in sigma at q={q}"));
        }
    }
    for (sigma, q) in [(0.8, 0.01), (1.5, 0.05)] {
        let e: Vec<f64> = [1u64, 10, 100, 1000, 10000].iter().map(|&t| eps(sigma, q, t)).collect();
        if e.windows(2).any(|w| w[1] < w[0]) {
            return Err(format!("decreasing in steps at sigma={sigma}"));
        }
    }
    let mut worst: f64 = 0.0;
    for target in [0.5, 1.0, 2.0, 8.0] {
        let (q, steps) = (0.01, 1000);
        let sigma = calibrate_sigma(target, 1e-5, q, steps).unwrap();
        let spent = eps(sigma, q, steps);
        worst = worst.max(spent / target - 1.0);
        if spent > target * (1.0 + 1e-4) {
            return Err(format!("calibrated σ={sigma} spends {spent} > {target}"));
        }
    }
    Ok(format!("q=1 reduction, monotonicity and round trip hold (max overshoot {worst:.1e})"))
}

fn conversion() -> Outcome {
    let fixed = rdp_to_dp(2.0, 1.0, (-1.0f64).exp()).unwrap();
    if fixed != 2.0 {
        return Err(format!("rdp_to_dp(2, 1, 1/e) = {fixed}"));
    }
    let mut r = rng::stream(6, 0);
    for i in 0..1000 {
        let a = r.random_range(1.01..256.0);
        let (e1, e2) = (r.random_range(0.0..100.0), r.random_range(0.0..100.0));
        let delta = (-r.random_range(1.0f64..30.0)).exp();
        let lin = rdp_to_dp(a, e1 + e2, delta).unwrap() - rdp_to_dp(a, e1, delta).unwrap();
        if (lin - e2).abs() > 1e-9 * (1.0 + e1 + e2) {
            return Err(format!("input {i}: not linear in the RDP value"));
        }
        let da = r.random_range(0.01..50.0);
        if rdp_to_dp(a + da, e1, delta).unwrap() >= rdp_to_dp(a, e1, delta).unwrap() {
            return Err(format!("input {i}: not decreasing in order"));
        }
    }
    Ok("fixed point exact; 1000 linearity and order checks".into())
}

fn clipping() -> Outcome {
    let mut r = rng::stream(7, 0);
    for i in 0..10_000 {
        let dim = r.random_range(1..50);
        let scale = 10f64.powf(r.random_range(-4.0..4.0));
        let g: Vec<f64> = (0..dim).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect();
        let c = 10f64.powf(r.random_range(-3.0..3.0));
        let out = clip_basic(&g, c);
        if l2_norm(&out) > c + 1e-12 {
            return Err(format!("vector {i}: norm {} > {c}", l2_norm(&out)));
        }
        if l2_norm(&g) <= c && out.iter().zip(&g).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(format!("vector {i}: within bound but changed"));
        }
        let gamma = 10f64.powf(r.random_range(-6.0..1.0));
        if l2_norm(&clip_auto(&g, gamma).unwrap()) >= 1.0 {
            return Err(format!("vector {i}: auto clip norm ≥ 1"));
        }
    }
    check(clip_basic(&[3.0, 4.0], 1.0) == vec![0.6, 0.8], "10000 vectors; (3,4) -> (0.6,0.8)".into())
}

fn gradient_check() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..200u64 {
        let mut r = rng::stream(8, i);
        let dim = r.random_range(1..8);
        let classes = r.random_range(2..5);
        let layout =
            if i < 100 { ModelLayout::logistic(dim, classes) } else { ModelLayout::mlp(dim, r.random_range(1..8), classes) };
        let mut p = ModelParams::init(layout, &mut r);
        for t in p.theta.iter_mut() {
            *t += 0.5 * r.sample::<f64, _>(StandardNormal);
        }
        let x: Vec<f64> = (0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let ex = Example { features: &x, label: r.random_range(0..classes) };
        let analytic = p.example_gradient(&ex).unwrap();
        let h = 1e-5;
        let numeric: Vec<f64> = (0..p.theta.len())
            .map(|k| {
                let (mut up, mut down) = (p.clone(), p.clone());
                up.theta[k] += h;
                down.theta[k] -= h;
                (up.loss(&ex).unwrap() - down.loss(&ex).unwrap()) / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let rel = l2_norm(&diff) / l2_norm(&analytic).max(l2_norm(&numeric)).max(1e-8);
        worst = worst.max(rel);
        if rel > 1e-4 {
            return Err(format!("instance {i} ({layout}): relative error {rel:.2e}"));
        }
    }
    Ok(format!("100 logistic + 100 MLP instances, worst relative error {worst:.2e}"))
}

fn stripped(path: &Path) -> Result<Vec<RunRecord>, String> {
    let mut v: Vec<RunRecord> = read_runs(path).map_err(|e| e.to_string())?.iter().map(RunRecord::without_timing).collect();
    v.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(v)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let train = |name: &str| {
        let out = d.join(name);
        dprelia(&[
            "train", "--dataset", "blobs:n=400,dims=5,classes=3,sep=2,seed=4", "--model", "mlp:6", "--steps", "60",
            "--batch", "32", "--sigma", "1.1", "--seed", "12345", "--unsafe-fixed-seed", "--out", out.to_str().unwrap(),
        ])?;
        stripped(&out)
    };
    let (a, b) = (train("a.jsonl")?, train("b.jsonl")?);
    if a != b || a.len() != 1 {
        return Err("two train executions differ".into());
    }

    let manifest = d.join("manifest.json");
    std::fs::write(
        &manifest,
        r#"{"methods":[{"method_id":"dpsgd","learning_rate":0.5,"batch_target":32,"steps":80,"clip":{"kind":"basic","clip_bound":1.0}}],
            "settings":[{"dataset_id":"blobs:n=500,dims=6,classes=2,sep=1.5,seed=2","layout":"lr(6->2)","epsilon":1.0},
                        {"dataset_id":"blobs:n=500,dims=6,classes=2,sep=1.5,seed=2","layout":"mlp(6-4->2)","epsilon":"inf"}],
            "runs_per_cell":4}"#,
    )
    .map_err(|e| e.to_string())?;
    let sweep = |workers: &str| {
        let out = d.join(format!("w{workers}"));
        dprelia(&[
            "sweep", "--manifest", manifest.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", workers,
            "--master-seed", "99", "--unsafe-fixed-seed",
        ])?;
        stripped(&out.join("runs.jsonl"))
    };
    let (four, one) = (sweep("4")?, sweep("1")?);
    check(
        four == one && four.len() == 8,
        format!("train x2 identical; sweep --workers 4 == --workers 1 over {} records", four.len()),
    )
}

fn power_rule() -> Outcome {
    let (n1, n2) = (required_runs(1.0).unwrap(), required_runs(0.5).unwrap());
    // effect 1 in units of the per-method deviation, with within-pair
    // correlation 0.5 so the deviation of the differences matches it
    let paired = simulated_power(1.0, 16, 0.05, 0.5, 2000, 10, Execution::Parallel).unwrap();
    let independent = simulated_power(1.0, 16, 0.05, 0.0, 2000, 10, Execution::Parallel).unwrap();
    check(
        n1 == 16 && n2 == 64 && paired >= 0.75,
        format!("required_runs(1)={n1}, (0.5)={n2}; power {paired:.3} (uncorrelated pairs: {independent:.3})"),
    )
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("paired t-test example", t_test_example),
        ("honest selection calibration", honest_calibration),
        ("cherry-pick dominance", cherry_pick_dominance),
        ("variability ordering", variability_ordering),
        ("accountant", accountant),
        ("RDP to DP conversion", conversion),
        ("clipping invariants", clipping),
        ("gradient check", gradient_check),
        ("determinism", determinism),
        ("power rule", power_rule),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
