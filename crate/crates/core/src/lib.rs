//! Toolkit for running, accounting, and statistically comparing
//! differentially private training experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod accountant;
pub mod checklist;
pub mod dpsgd;
pub mod error;
pub mod exec;
pub mod float_serde;
pub mod harness;
pub mod rng;
pub mod seedhack;
pub mod stats;

pub use error::{Error, Result};

/// Crate version stamped into every artifact.
pub const TOOL_VERSION: &str = concat!("dprelia ", env!("CARGO_PKG_VERSION"));
