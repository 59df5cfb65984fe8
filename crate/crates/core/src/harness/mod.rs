//! Multi-seed experiment sweeps, variability summaries, and paired method
//! comparison over persisted run records.

mod compare;
mod io;
mod keys;
mod manifest;
mod summary;
mod sweep;

pub use compare::{compare_methods, CellComparison, Comparison, PairBy};
pub use io::{read_runs, write_json, JsonlWriter};
pub use keys::{CellKey, SettingKey};
pub use manifest::{ExperimentManifest, MethodSpec, Regime, Setting};
pub use summary::{summarize, write_summary_csv, CellSummary, VariabilitySummary};
pub use sweep::{run_sweep, ResolvedCell, SweepOptions, SweepOutcome};
