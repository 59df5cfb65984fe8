use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Both groups have zero spread, so a standardized effect is undefined.
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("effect size is zero: no finite number of runs reaches the target power")]
    InfiniteRuns,

    #[error("accounting failed: {0}")]
    AccountingFailed(String),

    #[error("calibration failed: {0}")]
    CalibrationFailed(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at step {step}: non-finite parameters")]
    Diverged { step: u64 },

    #[error("pairing error: {} orphaned key(s): {}", .orphans.len(), .orphans.join(", "))]
    Pairing { orphans: Vec<String> },

    #[error("incomplete grading: missing declared answers for {}", .missing.join(", "))]
    IncompleteGrading { missing: Vec<String> },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::DegenerateSample(_) => "degenerate-sample",
            Error::InfiniteRuns => "infinite-runs",
            Error::AccountingFailed(_) => "accounting-failed",
            Error::CalibrationFailed(_) => "calibration-failed",
            Error::Config(_) => "config",
            Error::Diverged { .. } => "diverged",
            Error::Pairing { .. } => "pairing",
            Error::IncompleteGrading { .. } => "incomplete-grading",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
