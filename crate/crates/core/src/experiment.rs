//! Experiment specs, sweeps, minimal-worker search and capacity plans.
//!
//! A spec is one JSON file:
//!
//! ```json
//! {
//!   "name": "fig9",
//!   "preset": "llama2-70b-a100",
//!   "policies": ["best-fit", "jsq", "p2"],
//!   "rates": [5, 10, 15, 20, 25],
//!   "seeds": [1, 2],
//!   "workload": { "duration": 120, "distribution": "sharegpt-like" }
//! }
//! ```
//!
//! Anything the preset provides (`models`, `slo`, `kv_capacity`,
//! `gpus_per_worker`) can be overridden inline; `models` may also be a path
//! to a model JSON file. Relative paths resolve against the spec's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parallel;
use crate::perf_models::PerfModelSet;
use crate::placement::{Knobs, LoadMetric, SloSpec};
use crate::presets;
use crate::scaling::{fit_demand, plan_groups, DemandFit, DemandModel, ScalingError};
use crate::sim::{self, Policy, PredictionMode, SimConfig, SimError, SimMode};
use crate::worker_config::{PlanError, WorkerPlanInput};
use crate::workload::{self, LengthDistribution, TraceRecord};
use crate::DataError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("{policy} at {rate} req/s (seed {seed}): attainment is not monotone in workers; probes {probes:?}")]
    NonConvergence { policy: String, rate: f64, seed: u64, probes: Vec<(usize, f64)> },
}

impl From<PlanError> for ExperimentError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::Invalid(m) => ExperimentError::Config(m),
            other => ExperimentError::Infeasible(other.to_string()),
        }
    }
}

impl From<ScalingError> for ExperimentError {
    fn from(e: ScalingError) -> Self {
        match e {
            ScalingError::Invalid(m) => ExperimentError::Config(m),
            other => ExperimentError::Infeasible(other.to_string()),
        }
    }
}

/// Inline models or a path to a model JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelsSource {
    Inline(PerfModelSet),
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    /// CSV trace; when set, rates and durations are ignored.
    #[serde(default)]
    pub trace: Option<PathBuf>,
    /// Arrival rate used when `rates` is empty.
    #[serde(default)]
    pub rate: Option<f64>,
    #[serde(default = "default_duration")]
    pub duration: f64,
    /// `sharegpt-like` or a path to a distribution JSON file.
    #[serde(default)]
    pub distribution: Option<String>,
}

fn default_duration() -> f64 {
    60.0
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self { trace: None, rate: None, duration: default_duration(), distribution: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpec {
    /// Largest pool tried before a point is declared infeasible.
    #[serde(default = "default_search_max")]
    pub max_workers: usize,
    /// Attainment counted as full.
    #[serde(default = "default_target")]
    pub target: f64,
}

fn default_search_max() -> usize {
    256
}
fn default_target() -> f64 {
    1.0
}

impl Default for SearchSpec {
    fn default() -> Self {
        Self { max_workers: default_search_max(), target: default_target() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    /// Worker sizing inputs; taken from the preset when absent.
    #[serde(default)]
    pub input: Option<WorkerPlanInput>,
    /// Rates to tabulate; the spec's `rates` when empty.
    #[serde(default)]
    pub rates: Vec<f64>,
    /// Demand line; fitted from a best-fit minimal-worker search over the
    /// rates when absent.
    #[serde(default)]
    pub demand: Option<DemandModel>,
    #[serde(default = "default_e")]
    pub e: f64,
    /// Scheduler latency budget, seconds.
    #[serde(default = "default_t_s")]
    pub t_s: f64,
    /// Requests per second one scheduler handles within `t_s`.
    #[serde(default = "default_sched_rate")]
    pub sched_rate_limit: f64,
}

fn default_e() -> f64 {
    0.1
}
fn default_t_s() -> f64 {
    0.05
}
fn default_sched_rate() -> f64 {
    1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub models: Option<ModelsSource>,
    #[serde(default)]
    pub slo: Option<SloSpec>,
    #[serde(default)]
    pub kv_capacity: Option<f64>,
    #[serde(default)]
    pub gpus_per_worker: Option<u32>,
    #[serde(default)]
    pub knobs: Knobs,
    #[serde(default)]
    pub mode: SimMode,
    #[serde(default)]
    pub heartbeat: Option<f64>,
    #[serde(default)]
    pub prediction: PredictionMode,
    #[serde(default)]
    pub rebalance: bool,
    /// Queue metric for JSQ.
    #[serde(default)]
    pub jsq_metric: LoadMetric,
    /// Queue metric for power-of-two.
    #[serde(default)]
    pub p2_metric: LoadMetric,
    /// Decode pool size for `simulate` and `sweep`; unbounded when absent.
    #[serde(default)]
    pub max_workers: Option<usize>,
    #[serde(default)]
    pub max_prefill_workers: Option<usize>,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub rates: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_policies")]
    pub policies: Vec<String>,
    #[serde(default)]
    pub search: SearchSpec,
    #[serde(default)]
    pub plan: Option<PlanSpec>,
    #[serde(default)]
    pub record_events: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_policies() -> Vec<String> {
    vec!["best-fit".into()]
}

/// Everything a run needs, with presets and files resolved.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub base: SimConfig,
    pub policies: Vec<Policy>,
    pub source: WorkloadSource,
    pub rates: Vec<f64>,
    pub seeds: Vec<u64>,
    jsq_metric: LoadMetric,
    p2_metric: LoadMetric,
}

#[derive(Debug, Clone)]
pub enum WorkloadSource {
    Trace(Vec<TraceRecord>),
    Poisson { duration: f64, dist: LengthDistribution },
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let mut spec = Self::from_json(&text)
            .map_err(|e| ExperimentError::Config(format!("{}: {}", path.display(), e.to_string().trim_start_matches("config: "))))?;
        spec.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(spec)
    }

    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn preset(&self) -> Result<Option<presets::ServingPreset>, ExperimentError> {
        self.preset.as_deref().map(presets::serving).transpose().map_err(Into::into)
    }

    pub fn resolve(&self) -> Result<Resolved, ExperimentError> {
        let cfg_err = |m: &str| ExperimentError::Config(m.to_string());
        let preset = self.preset()?;
        let models = match &self.models {
            Some(ModelsSource::Inline(m)) => *m,
            Some(ModelsSource::Path(p)) => PerfModelSet::load(&self.path(p))?,
            None => preset.as_ref().map(|p| p.models).ok_or_else(|| cfg_err("no models: set `models` or `preset`"))?,
        };
        let slo = self
            .slo
            .or(preset.as_ref().map(|p| p.slo))
            .ok_or_else(|| cfg_err("no SLO: set `slo` or `preset`"))?;
        let kv_capacity = self
            .kv_capacity
            .or(preset.as_ref().map(|p| p.kv_capacity))
            .ok_or_else(|| cfg_err("no KV capacity: set `kv_capacity` or `preset`"))?;
        let mut base = SimConfig::new(models, slo, kv_capacity);
        base.mode = self.mode;
        base.knobs = self.knobs;
        if let Some(h) = self.heartbeat {
            base.heartbeat = h;
        }
        base.seed = self.seed;
        base.prediction = self.prediction;
        base.rebalance = self.rebalance;
        base.max_workers = self.max_workers;
        base.max_prefill_workers = self.max_prefill_workers;
        base.gpus_per_worker = self.gpus_per_worker.or(preset.as_ref().map(|p| p.gpus_per_worker)).unwrap_or(1);
        base.record_events = self.record_events;
        base.validate()?;

        if self.policies.is_empty() {
            return Err(cfg_err("at least one policy is required"));
        }
        let policies = self
            .policies
            .iter()
            .map(|p| p.parse::<Policy>().map_err(ExperimentError::Config))
            .collect::<Result<Vec<_>, _>>()?;

        let w = &self.workload;
        let (source, rates) = match &w.trace {
            Some(p) => {
                let records = workload::load_trace(&self.path(p))?;
                let span = records.last().map_or(0.0, |r| r.arrival_time);
                let rate = if span > 0.0 { records.len() as f64 / span } else { 0.0 };
                (WorkloadSource::Trace(records), vec![rate])
            }
            None => {
                let dist = match w.distribution.as_deref() {
                    None | Some("sharegpt-like") => presets::sharegpt_like(),
                    Some(p) => {
                        let path = self.path(Path::new(p));
                        let text = std::fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
                        let d: LengthDistribution =
                            serde_json::from_str(&text).map_err(|e| DataError::Json(e.to_string()).at(&path))?;
                        d.validate().map_err(|e| e.at(&path))?;
                        d
                    }
                };
                let rates = if self.rates.is_empty() { w.rate.into_iter().collect() } else { self.rates.clone() };
                if rates.is_empty() {
                    return Err(cfg_err("no arrival rate: set `rates` or `workload.rate`"));
                }
                if let Some(r) = rates.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
                    return Err(ExperimentError::Config(format!("rates must be positive (got {r})")));
                }
                if !(w.duration >= 0.0 && w.duration.is_finite()) {
                    return Err(cfg_err("workload.duration must be non-negative"));
                }
                (WorkloadSource::Poisson { duration: w.duration, dist }, rates)
            }
        };
        let seeds = if self.seeds.is_empty() { vec![self.seed] } else { self.seeds.clone() };
        if !(self.search.target > 0.0 && self.search.target <= 1.0) || self.search.max_workers == 0 {
            return Err(cfg_err("search needs 0 < target <= 1 and max_workers >= 1"));
        }
        Ok(Resolved { base, policies, source, rates, seeds, jsq_metric: self.jsq_metric, p2_metric: self.p2_metric })
    }

    /// Sizing inputs from the spec or the preset.
    pub fn plan_input(&self) -> Result<WorkerPlanInput, ExperimentError> {
        if let Some(input) = self.plan.as_ref().and_then(|p| p.input) {
            return Ok(input);
        }
        self.preset()?
            .and_then(|p| p.plan)
            .ok_or_else(|| ExperimentError::Config("no worker sizing inputs: set `plan.input` or a preset".into()))
    }
}

impl Resolved {
    pub fn workload(&self, rate: f64, seed: u64) -> Vec<TraceRecord> {
        match &self.source {
            WorkloadSource::Trace(r) => r.clone(),
            WorkloadSource::Poisson { duration, dist } => workload::generate(rate, *duration, dist, seed),
        }
    }

    /// Base config specialised for one policy and seed.
    pub fn config(&self, policy: &Policy, seed: u64) -> SimConfig {
        let mut c = self.base.clone();
        c.seed = seed;
        c.load_metric = match policy {
            Policy::PowerOfTwo => self.p2_metric,
            _ => self.jsq_metric,
        };
        c
    }

    /// Every (policy, rate, seed) point, in output order.
    pub fn points(&self) -> Vec<(Policy, f64, u64)> {
        let mut v = Vec::new();
        for p in &self.policies {
            for &r in &self.rates {
                for &s in &self.seeds {
                    v.push((p.clone(), r, s));
                }
            }
        }
        v
    }
}

/// One line of the sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: String,
    pub rate: f64,
    pub seed: u64,
    pub n_requests: usize,
    pub n_rejected: usize,
    pub slo_attainment: f64,
    pub ttft_attainment: f64,
    pub atgt_attainment: f64,
    pub p99_ttft: f64,
    pub p99_atgt: f64,
    pub workers_used_max: usize,
    pub gpu_seconds: f64,
    pub kv_overflow_events: u64,
    pub evictions: u64,
    pub rebalance_moves: u64,
}

impl SweepRow {
    fn new(policy: &Policy, rate: f64, seed: u64, m: &sim::Metrics) -> Self {
        Self {
            policy: policy.name().into(),
            rate,
            seed,
            n_requests: m.n_requests,
            n_rejected: m.n_rejected,
            slo_attainment: m.slo_attainment,
            ttft_attainment: m.ttft_attainment,
            atgt_attainment: m.atgt_attainment,
            p99_ttft: m.p99_ttft,
            p99_atgt: m.p99_atgt,
            workers_used_max: m.workers_used_max,
            gpu_seconds: m.gpu_seconds,
            kv_overflow_events: m.kv_overflow_events,
            evictions: m.evictions,
            rebalance_moves: m.rebalance_moves,
        }
    }
}

/// Simulates every point of the spec.
pub fn sweep(r: &Resolved) -> Result<Vec<SweepRow>, ExperimentError> {
    let points = r.points();
    parallel::map(&points, |(policy, rate, seed)| {
        let out = sim::run(&r.config(policy, *seed), &r.workload(*rate, *seed), policy)?;
        Ok(SweepRow::new(policy, *rate, *seed, &out.metrics))
    })
    .into_iter()
    .collect()
}

/// Outcome of a minimal-worker search at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub workers: usize,
    /// `(pool size, attainment)` in probe order.
    pub probes: Vec<(usize, f64)>,
    /// False when some smaller pool met the target while a larger one did not.
    pub monotone: bool,
}

/// Smallest decode pool whose run reaches `search.target` attainment:
/// doubling to bracket, then bisection.
pub fn min_workers(
    config: &SimConfig,
    workload: &[TraceRecord],
    policy: &Policy,
    search: &SearchSpec,
) -> Result<SearchResult, ExperimentError> {
    let mut probes = Vec::new();
    let mut probe = |n: usize| -> Result<bool, ExperimentError> {
        let mut c = config.clone();
        c.max_workers = Some(n);
        c.record_events = false;
        let a = sim::run(&c, workload, policy)?.metrics.slo_attainment;
        probes.push((n, a));
        Ok(a >= search.target - 1e-12)
    };
    let (mut lo, mut hi) = (0, 1);
    while !probe(hi)? {
        if hi >= search.max_workers {
            return Err(ExperimentError::Infeasible(format!(
                "{} misses the attainment target even with {} workers",
                policy.name(),
                search.max_workers
            )));
        }
        lo = hi;
        hi = (hi * 2).min(search.max_workers);
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if probe(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let ok = |a: f64| a >= search.target - 1e-12;
    let monotone = !probes.iter().any(|&(n, a)| ok(a) && probes.iter().any(|&(m, b)| m > n && !ok(b)));
    Ok(SearchResult { workers: hi, probes, monotone })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub rate: f64,
    pub policy: String,
    pub seed: u64,
    pub workers: usize,
    pub monotone: bool,
}

/// Per (rate, policy) summary over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub rate: f64,
    pub policy: String,
    pub workers_min: usize,
    pub workers_max: usize,
    pub workers_mean: f64,
    /// Mean workers relative to the first policy of the spec.
    pub ratio: f64,
}

/// Minimal workers for full attainment at every point. A non-monotone
/// point is an error unless `allow_non_monotone`, in which case it is only
/// flagged in its row.
pub fn compare(r: &Resolved, search: &SearchSpec, allow_non_monotone: bool) -> Result<Vec<CompareRow>, ExperimentError> {
    let points = r.points();
    let rows = parallel::map(&points, |(policy, rate, seed)| {
        let res = min_workers(&r.config(policy, *seed), &r.workload(*rate, *seed), policy, search)?;
        if !res.monotone && !allow_non_monotone {
            return Err(ExperimentError::NonConvergence {
                policy: policy.name().into(),
                rate: *rate,
                seed: *seed,
                probes: res.probes,
            });
        }
        Ok(CompareRow { rate: *rate, policy: policy.name().into(), seed: *seed, workers: res.workers, monotone: res.monotone })
    });
    let mut rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| a.rate.total_cmp(&b.rate));
    Ok(rows)
}

pub fn summarize(rows: &[CompareRow], policies: &[Policy]) -> Vec<CompareSummary> {
    let mut groups: BTreeMap<(u64, usize), Vec<usize>> = BTreeMap::new();
    for row in rows {
        let p = policies.iter().position(|p| p.name() == row.policy).unwrap_or(usize::MAX);
        groups.entry((row.rate.to_bits(), p)).or_default().push(row.workers);
    }
    let mean = |v: &[usize]| v.iter().sum::<usize>() as f64 / v.len() as f64;
    let mut out: Vec<CompareSummary> = Vec::new();
    for ((rate_bits, p), ws) in &groups {
        let rate = f64::from_bits(*rate_bits);
        let reference = groups
            .iter()
            .find(|((r, _), _)| *r == *rate_bits)
            .map(|(_, v)| mean(v))
            .unwrap_or(f64::NAN);
        out.push(CompareSummary {
            rate,
            policy: policies.get(*p).map_or("?", |p| p.name()).into(),
            workers_min: *ws.iter().min().expect("group is non-empty"),
            workers_max: *ws.iter().max().expect("group is non-empty"),
            workers_mean: mean(ws),
            ratio: mean(ws) / reference,
        });
    }
    out.sort_by(|a, b| a.rate.total_cmp(&b.rate));
    out
}

/// One row of a capacity plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub rate: f64,
    pub gpus_per_worker: u32,
    pub n_workers: u32,
    pub n_groups: u32,
    pub workers_per_group: Vec<u32>,
    pub group_rates: Vec<f64>,
    /// Rate at or below the demand line's validity floor; counts are the
    /// raw formula value.
    pub below_floor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub gpus_per_worker: u32,
    pub demand: DemandModel,
    /// Fit diagnostics when the demand line was fitted here.
    pub fit: Option<DemandFit>,
    pub min_workers_per_group: u32,
    pub rows: Vec<PlanRow>,
}

/// Worker size, demand line and group layout for each requested rate.
pub fn plan(spec: &ExperimentSpec) -> Result<Plan, ExperimentError> {
    let ps = spec.plan.clone().unwrap_or(PlanSpec {
        input: None,
        rates: Vec::new(),
        demand: None,
        e: default_e(),
        t_s: default_t_s(),
        sched_rate_limit: default_sched_rate(),
    });
    let gpus = spec.plan_input()?.optimal_worker_size()?;
    let rates = if ps.rates.is_empty() { spec.rates.clone() } else { ps.rates.clone() };
    if rates.is_empty() {
        return Err(ExperimentError::Config("plan needs rates (`plan.rates` or `rates`)".into()));
    }
    let (demand, fit) = match ps.demand {
        Some(d) => (d, None),
        None => {
            let mut fitting = spec.clone();
            fitting.policies = vec!["best-fit".into()];
            fitting.rates = rates.clone();
            fitting.seeds = vec![spec.seed];
            let r = fitting.resolve()?;
            let rows = compare(&r, &spec.search, true)?;
            let history: Vec<(f64, u32)> = rows.iter().map(|row| (row.rate, row.workers as u32)).collect();
            let fit = fit_demand(&history)?;
            (fit.model, Some(fit))
        }
    };
    let limit = ps.sched_rate_limit;
    let mut out = Vec::with_capacity(rates.len());
    for &rate in &rates {
        let g = plan_groups(rate, ps.e, ps.t_s, |_| limit, &demand)?;
        out.push(PlanRow {
            rate,
            gpus_per_worker: gpus,
            n_workers: g.total_workers(),
            n_groups: g.n_groups,
            workers_per_group: g.workers_per_group.clone(),
            group_rates: g.group_rates.clone(),
            below_floor: rate <= demand.r_floor,
        });
    }
    Ok(Plan { gpus_per_worker: gpus, demand, fit, min_workers_per_group: crate::scaling::min_workers_per_group(ps.e), rows: out })
}

/// Writes `rows` as CSV with a header line.
pub fn write_csv<T: Serialize, W: std::io::Write>(out: W, rows: &[T]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| DataError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| DataError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec::from_json(
            r#"{
                "preset": "llama2-13b-a100",
                "policies": ["best-fit", "jsq"],
                "rates": [2.0],
                "seeds": [1],
                "workload": { "duration": 20 }
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn spec_resolves_preset() {
        let r = small_spec().resolve().unwrap();
        assert_eq!(r.base.slo.t_dec, 0.03);
        assert_eq!(r.points().len(), 2);
        assert!(!r.workload(2.0, 1).is_empty());
    }

    #[test]
    fn spec_errors() {
        assert!(matches!(ExperimentSpec::from_json(r#"{"bogus": 1}"#), Err(ExperimentError::Config(_))));
        let mut s = small_spec();
        s.policies.clear();
        assert!(matches!(s.resolve(), Err(ExperimentError::Config(_))));
        let mut s = small_spec();
        s.policies = vec!["random".into()];
        assert!(matches!(s.resolve(), Err(ExperimentError::Config(_))));
        let mut s = small_spec();
        s.preset = None;
        assert!(matches!(s.resolve(), Err(ExperimentError::Config(_))));
        let mut s = small_spec();
        s.workload.trace = Some("/nonexistent/trace.csv".into());
        assert!(matches!(s.resolve(), Err(ExperimentError::Data(_))));
    }

    #[test]
    fn min_workers_is_minimal() {
        let r = small_spec().resolve().unwrap();
        let w = r.workload(2.0, 1);
        let cfg = r.config(&Policy::BestFit, 1);
        let res = min_workers(&cfg, &w, &Policy::BestFit, &SearchSpec::default()).unwrap();
        assert!(res.monotone);
        let at = |n| {
            let mut c = cfg.clone();
            c.max_workers = Some(n);
            sim::run(&c, &w, &Policy::BestFit).unwrap().metrics.slo_attainment
        };
        assert_eq!(at(res.workers), 1.0);
        if res.workers > 1 {
            assert!(at(res.workers - 1) < 1.0);
        }
    }

    #[test]
    fn summary_ratios() {
        let rows = vec![
            CompareRow { rate: 1.0, policy: "best-fit".into(), seed: 0, workers: 2, monotone: true },
            CompareRow { rate: 1.0, policy: "jsq".into(), seed: 0, workers: 3, monotone: true },
            CompareRow { rate: 1.0, policy: "jsq".into(), seed: 1, workers: 5, monotone: true },
        ];
        let s = summarize(&rows, &[Policy::BestFit, Policy::Jsq]);
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].workers_mean, 4.0);
        assert_eq!(s[1].ratio, 2.0);
        assert_eq!((s[1].workers_min, s[1].workers_max), (3, 5));
    }
}
