//! Iteration-level discrete-event simulation of a serving cluster.
//!
//! The fitted performance models act as ground-truth hardware: every
//! iteration lasts exactly what the models say and every request's KV
//! footprint follows the KV model token by token.
//!
//! Two execution modes:
//!
//! * default batching: each worker runs prefill and decode. Pending prefills
//!   preempt decoding, and every prefilled request joins the decode batch.
//! * split phase: a prefill pool runs prompt batches and hands each request
//!   to a decode worker chosen on the spot.
//!
//! New arrivals are collected between scheduler heartbeats and placed in
//! arrival order. Decode time per request is measured on the wall clock from
//! its first token to its last, so preemption stalls count against ATGT.

mod engine;
mod events;
mod metrics;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perf_models::PerfModelSet;
use crate::placement::{Decision, Knobs, LoadMetric, RequestId, SloSpec, WorkerId};
use crate::predictor::PredictionTable;
use crate::scaling::{AutoscaleSpec, ScaleDecision};
use crate::workload::TraceRecord;

pub use events::{EventKind, EventRecord};
pub use metrics::{nearest_rank, Metrics, RequestRow};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    ConfigInvalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    #[default]
    DefaultBatching,
    SplitPhase,
}

/// Where `l_pred` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictionMode {
    /// `l_pred = l_real`.
    #[default]
    Oracle,
    /// `l_pred = round(l_real * (1 + u))`, `u ~ U(-spread, spread)`.
    Noisy { spread: f64 },
    /// Bucket means of the prediction table.
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(default)]
    pub mode: SimMode,
    pub models: PerfModelSet,
    pub slo: SloSpec,
    #[serde(default)]
    pub knobs: Knobs,
    /// Scheduler heartbeat, seconds.
    #[serde(default = "default_heartbeat")]
    pub heartbeat: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub prediction: PredictionMode,
    /// KV capacity of one (decode) worker, kv-units.
    pub kv_capacity: f64,
    /// Decode worker pool size; unbounded when absent.
    #[serde(default)]
    pub max_workers: Option<usize>,
    /// Prefill pool size in split mode; unbounded when absent.
    #[serde(default)]
    pub max_prefill_workers: Option<usize>,
    /// Re-route new requests after prediction errors.
    #[serde(default)]
    pub rebalance: bool,
    #[serde(default)]
    pub load_metric: LoadMetric,
    #[serde(default = "default_gpus")]
    pub gpus_per_worker: u32,
    #[serde(default)]
    pub autoscale: Option<AutoscaleSpec>,
    /// Keep the per-event log.
    #[serde(default)]
    pub record_events: bool,
    /// Delay dispatch by the measured placement time. Breaks determinism.
    #[serde(default)]
    pub fold_placer_time: bool,
    /// Table used by `Table` predictions and for re-prediction. Built from
    /// the workload itself when absent.
    #[serde(default)]
    pub predictor: Option<PredictionTable>,
}

fn default_heartbeat() -> f64 {
    0.05
}

fn default_gpus() -> u32 {
    1
}

impl SimConfig {
    pub fn new(models: PerfModelSet, slo: SloSpec, kv_capacity: f64) -> Self {
        Self {
            mode: SimMode::DefaultBatching,
            models,
            slo,
            knobs: Knobs::default(),
            heartbeat: default_heartbeat(),
            seed: 0,
            prediction: PredictionMode::Oracle,
            kv_capacity,
            max_workers: None,
            max_prefill_workers: None,
            rebalance: false,
            load_metric: LoadMetric::BatchSize,
            gpus_per_worker: 1,
            autoscale: None,
            record_events: false,
            fold_placer_time: false,
            predictor: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::ConfigInvalid(m));
        if let Err(e) = self.models.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.slo.validate(&self.models) {
            return bad(e);
        }
        if let Err(e) = self.knobs.validate() {
            return bad(e);
        }
        if !(self.heartbeat > 0.0 && self.heartbeat.is_finite()) {
            return bad(format!("heartbeat must be positive (got {})", self.heartbeat));
        }
        if !(self.kv_capacity > 0.0) {
            return bad(format!("kv_capacity must be positive (got {})", self.kv_capacity));
        }
        if self.max_workers == Some(0) || self.max_prefill_workers == Some(0) {
            return bad("worker pools need at least one worker".into());
        }
        if let PredictionMode::Noisy { spread } = self.prediction {
            if !(0.0..1.0).contains(&spread) {
                return bad(format!("noise spread must be in [0, 1) (got {spread})"));
            }
        }
        if self.gpus_per_worker == 0 {
            return bad("gpus_per_worker must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Policy {
    /// Best-fit by capacity norm under the SLO constraints.
    #[default]
    BestFit,
    Jsq,
    PowerOfTwo,
    /// Replays a fixed request-to-worker map.
    ExactReplay(BTreeMap<RequestId, WorkerId>),
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::BestFit => "best-fit",
            Policy::Jsq => "jsq",
            Policy::PowerOfTwo => "p2",
            Policy::ExactReplay(_) => "exact-replay",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "best-fit" | "bestfit" | "best_fit" | "aladdin" => Ok(Policy::BestFit),
            "jsq" => Ok(Policy::Jsq),
            "p2" | "power-of-two" | "power_of_two" => Ok(Policy::PowerOfTwo),
            other => Err(format!("unknown policy '{other}' (expected best-fit, jsq or p2)")),
        }
    }
}

/// Everything one run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub metrics: Metrics,
    pub requests: Vec<RequestRow>,
    pub events: Vec<EventRecord>,
    pub decisions: Vec<Decision>,
    pub scale_log: Vec<ScaleDecision>,
}

/// Simulates `workload` (sorted by arrival) under `policy`.
pub fn run(config: &SimConfig, workload: &[TraceRecord], policy: &Policy) -> Result<SimOutput, SimError> {
    config.validate()?;
    if workload.windows(2).any(|w| w[1].arrival_time < w[0].arrival_time) {
        return Err(SimError::ConfigInvalid("workload arrival times must be sorted".into()));
    }
    if let Some(r) = workload.iter().find(|r| r.l_in == 0 || r.l_real == 0) {
        return Err(SimError::ConfigInvalid(format!("request {} has a zero length", r.id)));
    }
    let mut ids: Vec<_> = workload.iter().map(|r| r.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(SimError::ConfigInvalid("request ids must be unique".into()));
    }
    Ok(engine::Engine::new(config, workload, policy)?.run())
}
