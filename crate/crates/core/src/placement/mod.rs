//! SLO-constrained request placement.
//!
//! A request may join a worker only if, after admission, all of the
//! following hold on that worker:
//!
//! * **(b)** decode context: `sum(l_in + gamma * l_pred)` over every resident
//!   request stays within `theta` times the context budget of the batch size;
//! * **(c)** TTFT: the pending prefill batch finishes within `T_pre` of the
//!   earliest pending arrival;
//! * **(d)** preemption: the pending prefill fits within `theta` times the
//!   smallest ATGT slack of the requests it stalls;
//! * **(e)** KV: on the shared per-iteration grid, the summed KV footprint of
//!   all residents never exceeds the worker capacity.
//!
//! (a) and (f)-(h) are structural: every request lands on exactly one worker
//! and a worker counts as used iff it holds a request.

mod baselines;
mod best_fit;
mod exact;
mod log;
mod rank;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perf_models::PerfModelSet;

pub use baselines::{place_jsq, place_power_of_two, LoadMetric};
pub use best_fit::{place_best_fit, BestFitIndex};
pub use exact::{solve_exact, MAX_EXACT_REQUESTS};
pub use log::{write_jsonl, Decision};

pub type RequestId = u64;
pub type WorkerId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knobs {
    pub gamma: f64,
    pub theta: f64,
}

impl Default for Knobs {
    fn default() -> Self {
        Self { gamma: 0.5, theta: 1.0 }
    }
}

impl Knobs {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.gamma) || !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(format!(
                "knobs need gamma in [0, 1] and theta in (0, 1] (gamma={}, theta={})",
                self.gamma, self.theta
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SloSpec {
    /// TTFT target, seconds.
    pub t_pre: f64,
    /// ATGT target, seconds.
    pub t_dec: f64,
}

impl SloSpec {
    pub fn validate(&self, models: &PerfModelSet) -> Result<(), String> {
        if !(self.t_pre > 0.0) {
            return Err(format!("t_pre must be positive (got {})", self.t_pre));
        }
        if !(self.t_dec > models.decode.c3) {
            return Err(format!(
                "t_dec ({}) must exceed the decode floor c3 ({})",
                self.t_dec, models.decode.c3
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestState {
    Queued,
    Prefilling,
    Decoding,
    Finished,
}

/// One inference request. `l_real` is ground truth known only to the
/// simulator; placement never reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub arrival_time: f64,
    pub l_in: u32,
    pub l_pred: u32,
    pub l_out_so_far: u32,
    pub l_real: u32,
    pub t_dec_so_far: f64,
    pub state: RequestState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Admitted; waits for its prefill (or, on a decode-only worker, for the
    /// next iteration to join).
    Pending,
    Decoding,
}

/// Scheduler view of a request resident on a worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resident {
    pub id: RequestId,
    pub arrival_time: f64,
    pub l_in: u32,
    pub l_pred: u32,
    /// Output tokens generated so far.
    pub l_out: u32,
    /// Decode iterations completed (tokens generated after the first).
    pub n_dec: u32,
    /// Decode-phase wall time so far, including prefill stalls.
    pub t_dec: f64,
    pub phase: Phase,
    /// Set when the TTFT target was already unreachable at admission.
    pub ttft_exempt: bool,
}

impl Resident {
    pub fn fresh(c: &Candidate) -> Self {
        Self {
            id: c.id,
            arrival_time: c.arrival_time,
            l_in: c.l_in,
            l_pred: c.l_pred,
            l_out: c.l_out,
            n_dec: 0,
            t_dec: 0.0,
            phase: Phase::Pending,
            ttft_exempt: c.ttft_exempt,
        }
    }

    /// Remaining predicted output, never below one token.
    fn remaining_pred(&self) -> u32 {
        self.l_pred.max(self.l_out + 1) - self.l_out
    }

    /// ATGT slack: budget earned by completed decode iterations minus time spent.
    pub fn slack(&self, t_dec: f64) -> f64 {
        t_dec * self.n_dec as f64 - self.t_dec
    }
}

/// A request being considered for admission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: RequestId,
    pub arrival_time: f64,
    pub l_in: u32,
    pub l_pred: u32,
    /// Output tokens already generated (non-zero only for decode-stage
    /// handoffs and re-admissions).
    #[serde(default)]
    pub l_out: u32,
    #[serde(default)]
    pub ttft_exempt: bool,
}

impl Candidate {
    pub fn new(id: RequestId, arrival_time: f64, l_in: u32, l_pred: u32) -> Self {
        Self { id, arrival_time, l_in, l_pred: l_pred.max(1), l_out: 0, ttft_exempt: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerState {
    pub id: WorkerId,
    /// KV capacity M, kv-units.
    pub kv_capacity: f64,
    pub residents: Vec<Resident>,
    /// End of the iteration in flight; resident state is projected to it.
    pub busy_until: f64,
    /// Accumulated output-length error (tokens).
    pub err_len: f64,
    /// Accumulated batch-size error.
    pub err_batch: f64,
    /// Draining workers accept no new requests.
    pub draining: bool,
}

impl WorkerState {
    pub fn new(id: WorkerId, kv_capacity: f64) -> Self {
        Self {
            id,
            kv_capacity,
            residents: Vec::new(),
            busy_until: 0.0,
            err_len: 0.0,
            err_batch: 0.0,
            draining: false,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.residents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residents.is_empty()
    }

    /// KV held by requests that have been prefilled.
    pub fn kv_in_use(&self, models: &PerfModelSet) -> f64 {
        self.residents
            .iter()
            .filter(|r| r.phase == Phase::Decoding)
            .map(|r| models.kv.kv_usage(r.l_in, r.l_out))
            .sum()
    }

    pub fn admit(&mut self, c: &Candidate) {
        debug_assert!(self.residents.iter().all(|r| r.id != c.id), "request already resident");
        self.residents.push(Resident::fresh(c));
    }

    pub fn remove(&mut self, id: RequestId) -> Option<Resident> {
        let pos = self.residents.iter().position(|r| r.id == id)?;
        Some(self.residents.remove(pos))
    }
}

/// Whether prefill runs on the same worker as decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    #[default]
    Colocated,
    DecodeOnly,
}

/// Everything the feasibility predicate needs besides the worker itself.
#[derive(Debug, Clone, Copy)]
pub struct PlacementCtx<'a> {
    pub models: &'a PerfModelSet,
    pub slo: SloSpec,
    pub knobs: Knobs,
    pub now: f64,
    pub stage: Stage,
    norm: NormScale,
}

#[derive(Debug, Clone, Copy)]
struct NormScale {
    batch: f64,
    tokens: f64,
}

impl<'a> PlacementCtx<'a> {
    pub fn new(models: &'a PerfModelSet, slo: SloSpec, knobs: Knobs, now: f64, stage: Stage) -> Self {
        let norm = NormScale::derive(models, slo, knobs);
        Self { models, slo, knobs, now, stage, norm }
    }

    pub fn at(mut self, now: f64) -> Self {
        self.now = now;
        self
    }

    /// Context budget for a batch of `b`, scaled by theta.
    pub fn context_budget(&self, b: u32) -> f64 {
        if b <= 1 {
            return if self.models.decode.c_single <= self.slo.t_dec { f64::INFINITY } else { 0.0 };
        }
        self.knobs.theta * self.models.decode.context_budget(b, self.slo.t_dec)
    }

    pub fn weighted_context(&self, l_in: u32, l_pred: u32) -> f64 {
        l_in as f64 + self.knobs.gamma * l_pred as f64
    }

    /// Empty worker of capacity `kv_capacity`, idle at `now`.
    pub fn empty_worker(&self, id: WorkerId, kv_capacity: f64) -> WorkerState {
        let mut w = WorkerState::new(id, kv_capacity);
        w.busy_until = self.now;
        w
    }
}

impl NormScale {
    fn derive(models: &PerfModelSet, slo: SloSpec, knobs: Knobs) -> Self {
        let d = &models.decode;
        let budget = |b: u32| knobs.theta * d.context_budget(b, slo.t_dec);
        // largest batch whose budget still covers one token per request
        let mut batch = 1u32;
        if slo.t_dec > d.c3 {
            let approx = ((knobs.theta * (slo.t_dec - d.c3)) / (knobs.theta * d.c2 + d.k2)).floor();
            let mut b = approx.clamp(2.0, 1e9) as u32;
            while b > 2 && budget(b) < b as f64 {
                b -= 1;
            }
            while budget(b + 1) >= (b + 1) as f64 {
                b += 1;
            }
            if budget(b) >= b as f64 {
                batch = b;
            }
        }
        let tokens = budget(2);
        Self {
            batch: batch.max(1) as f64,
            tokens: if tokens.is_finite() && tokens > 0.0 { tokens } else { 1.0 },
        }
    }
}

/// Constraint identifiers, used as violation tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Constraint {
    #[serde(rename = "b")]
    DecodeContext,
    #[serde(rename = "c")]
    Ttft,
    #[serde(rename = "d")]
    Preemption,
    #[serde(rename = "e")]
    KvCapacity,
}

impl Constraint {
    pub fn tag(&self) -> &'static str {
        match self {
            Constraint::DecodeContext => "b",
            Constraint::Ttft => "c",
            Constraint::Preemption => "d",
            Constraint::KvCapacity => "e",
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Outcome of a feasibility check: `Ok(())` or the first violated constraint.
pub type Verdict = Result<(), Constraint>;

#[derive(Debug, Error, PartialEq)]
pub enum PlaceError {
    #[error("request {id} violates constraint ({tag}) even on an empty worker")]
    RequestInfeasibleAlone { id: RequestId, tag: Constraint },
    #[error("no feasible worker and the pool of {max} workers is exhausted")]
    PoolExhausted { max: usize },
    #[error("no new requests to place")]
    Empty,
    #[error("instance has {n} new requests; the exact solver accepts at most {max}")]
    TooLarge { n: usize, max: usize },
    #[error("no assignment within {max_workers} workers satisfies all constraints")]
    Infeasible { max_workers: usize },
}

/// Aggregates of one worker used by the feasibility predicate. Building one
/// is `O(k log k)` in the number of residents; checking a candidate against
/// it is `O(1)` for (b)-(d) and `O(k)` for (e).
#[derive(Debug, Clone)]
pub struct WorkerSummary {
    pub count: u32,
    pub weighted_ctx: f64,
    pub pending_input: u64,
    pub earliest_pending: f64,
    pub min_slack: f64,
    pub has_decoding: bool,
    pub busy_until: f64,
    pub kv_capacity: f64,
    /// KV footprint ramps `(last grid index, value at index 0)`, sorted by
    /// descending last index.
    profile: Vec<(u32, f64)>,
}

impl WorkerSummary {
    pub fn of(w: &WorkerState, ctx: &PlacementCtx<'_>) -> Self {
        let mut s = Self {
            count: 0,
            weighted_ctx: 0.0,
            pending_input: 0,
            earliest_pending: f64::INFINITY,
            min_slack: f64::INFINITY,
            has_decoding: false,
            busy_until: w.busy_until,
            kv_capacity: w.kv_capacity,
            profile: Vec::with_capacity(w.residents.len() + 1),
        };
        for r in &w.residents {
            s.count += 1;
            s.weighted_ctx += ctx.weighted_context(r.l_in, r.l_pred);
            match r.phase {
                Phase::Pending => {
                    s.pending_input += prefill_tokens(r.l_in, r.l_out) as u64;
                    if !r.ttft_exempt {
                        s.earliest_pending = s.earliest_pending.min(r.arrival_time);
                    }
                }
                Phase::Decoding => {
                    s.has_decoding = true;
                    s.min_slack = s.min_slack.min(r.slack(ctx.slo.t_dec));
                }
            }
            s.profile.push(ramp(ctx, r.l_in, r.l_out, r.remaining_pred(), r.phase));
        }
        s.profile.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.total_cmp(&b.1)));
        s
    }

    /// Checks constraints in order (b), (c), (d), (e).
    pub fn check(&self, c: &Candidate, ctx: &PlacementCtx<'_>) -> Verdict {
        let b = self.count + 1;
        let weighted = self.weighted_ctx + ctx.weighted_context(c.l_in, c.l_pred);
        if exceeds(weighted, ctx.context_budget(b)) {
            return Err(Constraint::DecodeContext);
        }
        if ctx.stage == Stage::Colocated {
            let total = self.pending_input + prefill_tokens(c.l_in, c.l_out) as u64;
            let t_prefill = ctx.models.prefill.prefill_time(total);
            let start = self.busy_until.max(ctx.now);
            let earliest =
                if c.ttft_exempt { self.earliest_pending } else { self.earliest_pending.min(c.arrival_time) };
            if earliest.is_finite() && exceeds(start + t_prefill - earliest, ctx.slo.t_pre) {
                return Err(Constraint::Ttft);
            }
            if self.has_decoding && exceeds(t_prefill, ctx.knobs.theta * self.min_slack) {
                return Err(Constraint::Preemption);
            }
        }
        let remaining = c.l_pred.max(c.l_out + 1) - c.l_out;
        let extra = ramp(ctx, c.l_in, c.l_out, remaining, Phase::Pending);
        if exceeds(self.peak_with(Some(extra), ctx), self.kv_capacity) {
            return Err(Constraint::KvCapacity);
        }
        Ok(())
    }

    /// Peak of the summed KV footprint over the future iteration grid.
    pub fn peak_with(&self, extra: Option<(u32, f64)>, ctx: &PlacementCtx<'_>) -> f64 {
        let h = ctx.models.kv.h;
        let mut acc = 0.0;
        let mut count = 0u32;
        let mut peak = 0.0f64;
        let mut extra = extra;
        let mut iter = self.profile.iter().copied().peekable();
        loop {
            let next = match (iter.peek().copied(), extra) {
                (Some(p), Some(e)) if e.0 > p.0 => extra.take(),
                (Some(_), _) => iter.next(),
                (None, Some(_)) => extra.take(),
                (None, None) => break,
            };
            let (end, a) = next.expect("one side non-empty");
            acc += a;
            count += 1;
            // close the group of equal ends before evaluating
            let same_next = iter.peek().is_some_and(|p| p.0 == end) || extra.is_some_and(|e| e.0 == end);
            if !same_next {
                peak = peak.max(acc + h * end as f64 * count as f64);
            }
        }
        peak
    }

    /// Incorporates an admitted candidate.
    pub fn admit(&mut self, c: &Candidate, ctx: &PlacementCtx<'_>) {
        self.count += 1;
        self.weighted_ctx += ctx.weighted_context(c.l_in, c.l_pred);
        self.pending_input += prefill_tokens(c.l_in, c.l_out) as u64;
        if !c.ttft_exempt {
            self.earliest_pending = self.earliest_pending.min(c.arrival_time);
        }
        let remaining = c.l_pred.max(c.l_out + 1) - c.l_out;
        let r = ramp(ctx, c.l_in, c.l_out, remaining, Phase::Pending);
        let pos = self.profile.partition_point(|p| p.0 > r.0 || (p.0 == r.0 && p.1 <= r.1));
        self.profile.insert(pos, r);
    }

    pub fn norm(&self, ctx: &PlacementCtx<'_>) -> f64 {
        norm_of(self.count as f64, self.weighted_ctx, ctx)
    }

    /// Loose upper bounds on what this worker can still take; see [`rank::Room`].
    pub(crate) fn room(&self, ctx: &PlacementCtx<'_>) -> rank::Room {
        let pre = &ctx.models.prefill;
        let tokens_within = |t: f64| {
            if pre.k1 > 0.0 {
                (t + 1e-9 * t.abs().max(1.0) - pre.c1) / pre.k1 - self.pending_input as f64 + 1.0
            } else {
                f64::INFINITY
            }
        };
        let (mut tokens, mut tokens_exempt) = (f64::INFINITY, f64::INFINITY);
        if ctx.stage == Stage::Colocated {
            if self.has_decoding {
                tokens_exempt = tokens_within(ctx.knobs.theta * self.min_slack);
            }
            tokens = tokens_exempt;
            if self.earliest_pending.is_finite() {
                let start = self.busy_until.max(ctx.now);
                tokens = tokens.min(tokens_within(ctx.slo.t_pre + self.earliest_pending - start));
            }
        }
        let budget = ctx.context_budget(self.count + 1);
        let kv_now: f64 = self.profile.iter().map(|p| p.1).sum();
        rank::Room {
            tokens,
            tokens_exempt,
            ctx: budget + 1e-6 * budget.abs().max(1.0) - self.weighted_ctx,
            kv: self.kv_capacity * (1.0 + 1e-6) + 1e-6 - kv_now,
        }
    }
}

/// What `c` needs in [`rank::Room`] units.
pub(crate) fn need(c: &Candidate, ctx: &PlacementCtx<'_>) -> rank::Need {
    let remaining = c.l_pred.max(c.l_out + 1) - c.l_out;
    rank::Need {
        tokens: prefill_tokens(c.l_in, c.l_out) as f64,
        exempt: c.ttft_exempt,
        ctx: ctx.weighted_context(c.l_in, c.l_pred),
        kv: ramp(ctx, c.l_in, c.l_out, remaining, Phase::Pending).1,
    }
}

/// `value > limit` beyond floating-point noise.
fn exceeds(value: f64, limit: f64) -> bool {
    value > limit + 1e-9 * limit.abs().max(1.0)
}

/// Tokens a prefill over this request processes (prompt plus any generated
/// tokens being recomputed).
fn prefill_tokens(l_in: u32, l_out: u32) -> u32 {
    l_in + l_out
}

/// KV ramp of one request on the grid starting at the next iteration.
///
/// On a colocated worker the next iteration is the pending prefill, during
/// which decoding requests hold their footprint without growing. Pending
/// requests (and every request on a decode-only worker) produce a token at
/// index 0.
fn ramp(ctx: &PlacementCtx<'_>, l_in: u32, l_out: u32, remaining: u32, phase: Phase) -> (u32, f64) {
    let kv = &ctx.models.kv;
    let idle_first = phase == Phase::Decoding && ctx.stage == Stage::Colocated;
    if idle_first {
        (remaining, kv.kv_usage(l_in, l_out))
    } else {
        (remaining - 1, kv.kv_usage(l_in, l_out + 1))
    }
}

fn norm_of(batch: f64, weighted_ctx: f64, ctx: &PlacementCtx<'_>) -> f64 {
    let x = batch / ctx.norm.batch;
    let y = weighted_ctx / ctx.norm.tokens;
    (x * x + y * y).sqrt()
}

/// L2 norm of the normalized batch size and gamma-weighted context of a worker.
pub fn capacity_norm(w: &WorkerState, ctx: &PlacementCtx<'_>) -> f64 {
    let weighted: f64 = w.residents.iter().map(|r| ctx.weighted_context(r.l_in, r.l_pred)).sum();
    norm_of(w.residents.len() as f64, weighted, ctx)
}

/// Would `c` be admissible on `w`?
pub fn feasible(w: &WorkerState, c: &Candidate, ctx: &PlacementCtx<'_>) -> Verdict {
    WorkerSummary::of(w, ctx).check(c, ctx)
}

/// Pool of workers under one scheduler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub workers: Vec<WorkerState>,
    pub kv_capacity: f64,
    /// `None` lets placers open workers without bound.
    pub max_workers: Option<usize>,
}

impl Cluster {
    pub fn new(kv_capacity: f64, max_workers: Option<usize>) -> Self {
        Self { workers: Vec::new(), kv_capacity, max_workers }
    }

    /// Pool with `n` idle workers already provisioned.
    pub fn fixed(kv_capacity: f64, n: usize) -> Self {
        let workers = (0..n).map(|i| WorkerState::new(i, kv_capacity)).collect();
        Self { workers, kv_capacity, max_workers: Some(n) }
    }

    pub fn can_open(&self) -> bool {
        self.max_workers.is_none_or(|m| self.workers.len() < m)
    }

    pub fn open_worker(&mut self, now: f64) -> Option<WorkerId> {
        if !self.can_open() {
            return None;
        }
        let id = self.workers.len();
        let mut w = WorkerState::new(id, self.kv_capacity);
        w.busy_until = now;
        self.workers.push(w);
        Some(id)
    }

    pub fn workers_in_use(&self) -> usize {
        self.workers.iter().filter(|w| !w.is_empty()).count()
    }
}

/// Map from request to worker plus the number of workers in use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub x: BTreeMap<RequestId, WorkerId>,
    pub workers_used: usize,
}

/// Reason a request could not be placed even on an empty worker, if any.
pub fn infeasible_alone(c: &Candidate, kv_capacity: f64, ctx: &PlacementCtx<'_>) -> Option<Constraint> {
    let empty = ctx.empty_worker(usize::MAX, kv_capacity);
    feasible(&empty, c, ctx).err()
}
