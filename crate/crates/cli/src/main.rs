//! `dprelia` — train DP-SGD runs across seeds, account for privacy, and
//! compare methods with paired tests.
//!
//! JSON results go to stdout. Failures print one line to stderr of the form
//! `dprelia: error[<kind>]: <message>` and exit 2; usage errors exit 1.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "dprelia", version, about = "Reliable evaluation of differentially private training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a Gaussian-blob dataset as CSV.
    GenData(GenDataArgs),
    /// Train one seeded run and print its record.
    Train(TrainArgs),
    /// Run every (method, setting, seed) cell of a manifest.
    Sweep(SweepArgs),
    /// Per-cell accuracy spread of recorded runs.
    Summarize(SummarizeArgs),
    /// Paired t-test of one method against another.
    Compare(CompareArgs),
    /// Simulate seed cherry-picking against the std and paired t-tests.
    Seedhack(SeedhackArgs),
    /// ε spent by Poisson-subsampled Gaussian DP-SGD.
    Account(AccountArgs),
    /// Smallest noise multiplier meeting a target ε.
    Calibrate(CalibrateArgs),
    /// Grade an experiment against the reproducibility checklist.
    Checklist(ChecklistArgs),
}

/// `auto` for a fresh entropy seed, or a fixed 64-bit value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedArg {
    Auto,
    Fixed(u64),
}

fn parse_seed(s: &str) -> Result<SeedArg, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(SeedArg::Auto);
    }
    let parsed = match s.strip_prefix("0x") {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed
        .map(SeedArg::Fixed)
        .map_err(|_| format!("expected `auto` or an unsigned 64-bit integer, got {s:?}"))
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub dims: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Distance between class centres.
    #[arg(long, default_value_t = 2.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// CSV path or blob spec such as `blobs:n=2000,dims=20,classes=2,sep=2,seed=0`.
    #[arg(long, default_value = "blobs:n=2000,dims=20,classes=2,sep=2,seed=0")]
    pub dataset: String,
    /// `lr` or `mlp:<hidden>`; input and class counts come from the dataset.
    #[arg(long, default_value = "lr")]
    pub model: String,
    #[arg(long, default_value = "dpsgd")]
    pub method_id: String,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    /// Expected Poisson batch size L.
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 200)]
    pub steps: u64,
    /// `none`, `basic:<C>` or `auto:<gamma>`.
    #[arg(long, default_value = "basic:1")]
    pub clip: String,
    /// Noise multiplier (0 trains without noise).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Budget the run must meet; requires --sigma (see `calibrate`).
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value = "auto", value_parser = parse_seed)]
    pub seed: SeedArg,
    /// Accept a fixed seed on a private run; the record loses its privacy guarantee.
    #[arg(long)]
    pub unsafe_fixed_seed: bool,
    /// Write the record as one JSON line here (plus a config echo).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Experiment manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for runs.jsonl and sweep.config.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Runs per cell; defaults to the manifest's value (3 if unset).
    #[arg(long)]
    pub runs: Option<usize>,
    /// Concurrent training runs; also read from DPRELIA_WORKERS.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Derive every run seed from this value instead of OS entropy.
    #[arg(long)]
    pub master_seed: Option<u64>,
    #[arg(long)]
    pub unsafe_fixed_seed: bool,
    /// Reuse the seeds recorded in this runs.jsonl.
    #[arg(long)]
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub runs: PathBuf,
    /// Also write the summary as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PairByArg {
    Run,
    Setting,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Run files; records of both methods may share a file.
    #[arg(long, required = true, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// Method tested for superiority.
    #[arg(long)]
    pub method_a: String,
    /// Reference method.
    #[arg(long)]
    pub method_b: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = PairByArg::Run)]
    pub pair_by: PairByArg,
    /// Write compare JSON here (and Markdown next to it).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Honest,
    CherryPick,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RuleArg {
    TwoSided,
    Superior,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineArg {
    Independent,
    Disjoint,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("pool").required(true).args(["synthetic", "runs"]))]
pub struct SeedhackArgs {
    /// Normal pool given as `mean,std,size`.
    #[arg(long)]
    pub synthetic: Option<String>,
    /// Pool(s) from recorded runs; several cells are simulated per ε.
    #[arg(long)]
    pub runs: Option<PathBuf>,
    /// Restrict --runs to one method.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, value_enum, default_value_t = ModeArg::CherryPick)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10)]
    pub subset_size: usize,
    /// Size of both the proposed and the baseline group.
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    #[arg(long, value_enum, default_value_t = RuleArg::TwoSided)]
    pub ttest_rule: RuleArg,
    #[arg(long, value_enum, default_value_t = BaselineArg::Independent)]
    pub baseline_draw: BaselineArg,
    /// Simulation seed (and synthetic pool seed unless --pool-seed).
    #[arg(long, default_value = "auto", value_parser = parse_seed)]
    pub seed: SeedArg,
    #[arg(long)]
    pub pool_seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AccountArgs {
    #[arg(long)]
    pub sigma: f64,
    /// Sampling rate L/N.
    #[arg(long)]
    pub q: f64,
    #[arg(long)]
    pub steps: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub q: f64,
    #[arg(long)]
    pub steps: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Markdown,
    Json,
}

#[derive(Debug, Args)]
pub struct ChecklistArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub runs: PathBuf,
    /// Output of `compare` (or a bare test report).
    #[arg(long)]
    pub comparison: PathBuf,
    /// Answers for the items data cannot decide (JSON).
    #[arg(long)]
    pub declarations: PathBuf,
    /// Override pass thresholds (JSON).
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
    pub format: FormatArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };

    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("dprelia: error[{}]: {msg}", e.kind());
            ExitCode::from(2)
        }
    }
}
