//! kvpack: joint request placement and worker scaling for SLO-bound,
//! continuously batched LLM serving.
//!
//! ```text
//!  workload ──► predictor ──► placement (best-fit / JSQ / P2 / exact)
//!                                 │            ▲
//!                                 ▼            │
//!                            sim engine ──► rebalancer
//!                                 │
//!  perf_models ──► worker_config  ▼
//!                      scaling ◄── metrics
//! ```
//!
//! * [`perf_models`]: linear KV, prefill and decode latency models.
//! * [`worker_config`]: tensor-parallel worker sizing by per-GPU throughput.
//! * [`predictor`]: output-length prediction from historical conditional means.
//! * [`placement`]: feasibility predicate, best-fit heuristic, baselines and an
//!   exhaustive exact solver.
//! * [`rebalancer`]: re-routing of not-yet-started requests after prediction errors.
//! * [`scaling`]: arrival-rate driven worker demand and scheduler-group planning.
//! * [`sim`]: deterministic iteration-level cluster simulator.
//! * [`workload`]: Poisson arrivals, length distributions, CSV traces.
//! * [`experiment`]: experiment specs, sweeps and policy comparison.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::Path;

use thiserror::Error;

pub mod perf_models;
pub mod experiment;
pub mod parallel;
pub mod placement;
pub mod predictor;
pub mod presets;
pub mod rebalancer;
pub mod scaling;
pub mod sim;
pub mod worker_config;
pub mod workload;

pub use perf_models::{DecodeModel, KvModel, PerfModelSet, PrefillModel};
pub use placement::{Knobs, SloSpec};
pub use sim::{run, Metrics, Policy, SimConfig, SimMode};

/// Errors raised while reading or writing data files.
#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error("json: {0}")]
    Json(String),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: arrival time decreases")]
    NonMonotoneTime { line: usize },
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    InFile { path: String, source: Box<DataError> },
}

impl DataError {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        DataError::Io { path: path.display().to_string(), reason: err.to_string() }
    }

    /// Attaches a file path to errors that do not carry one.
    pub(crate) fn at(self, path: &Path) -> Self {
        match self {
            e @ (DataError::Io { .. } | DataError::InFile { .. }) => e,
            e => DataError::InFile { path: path.display().to_string(), source: Box::new(e) },
        }
    }
}
