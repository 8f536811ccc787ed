use std::collections::{HashMap, VecDeque};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::events::{EventQueue, Payload};
use super::metrics::{mean, nearest_rank};
use super::{EventKind, EventRecord, Metrics, Policy, PredictionMode, RequestRow, SimConfig, SimError, SimMode, SimOutput};
use crate::placement::{
    infeasible_alone, place_jsq, place_power_of_two, BestFitIndex, Candidate, Cluster, Constraint, Decision, Phase,
    PlaceError, PlacementCtx, Stage, WorkerSummary,
};
use crate::predictor::{PredictionTable, DEFAULT_BUCKET_EDGES};
use crate::rebalancer::{self, update_errors, ErrorEvent, WorkerErrorState};
use crate::scaling::{Autoscaler, ScaleDecision};
use crate::workload::TraceRecord;

const KV_EPS: f64 = 1e-9;
const SLO_EPS: f64 = 1e-9;

struct ReqState {
    rec: TraceRecord,
    l_pred_orig: u32,
    l_pred: u32,
    first_token: Option<f64>,
    /// Split mode: handoff accepted by a decode worker, and the start of its
    /// first iteration there.
    placed_at: Option<f64>,
    decode_start: Option<f64>,
    finish: Option<f64>,
    worker: Option<usize>,
    rejected: bool,
    ttft_exempt: bool,
}

#[derive(Default)]
struct PrefillWorker {
    queue: Vec<usize>,
    batch: Vec<usize>,
    busy_until: f64,
    opened: Option<f64>,
    last_active: f64,
}

enum Outcome {
    Placed(usize),
    Deferred,
    Rejected,
}

pub(crate) struct Engine<'a> {
    cfg: &'a SimConfig,
    policy: &'a Policy,
    reqs: Vec<ReqState>,
    index: HashMap<u64, usize>,
    q: EventQueue,
    cluster: Cluster,
    running: Vec<bool>,
    inflight: Vec<(String, Vec<usize>)>,
    opened_at: Vec<Option<f64>>,
    last_active: Vec<f64>,
    kv_peak: Vec<f64>,
    early: Vec<Vec<ErrorEvent>>,
    waiting: VecDeque<usize>,
    handoff: VecDeque<usize>,
    prefill_pool: Vec<PrefillWorker>,
    rng: ChaCha8Rng,
    table: PredictionTable,
    last_hb: Option<u64>,
    hb_pending: bool,
    autoscaler: Option<Autoscaler>,
    arrivals_left: usize,
    metrics: Metrics,
    events: Vec<EventRecord>,
    decisions: Vec<Decision>,
    scale_log: Vec<ScaleDecision>,
}

fn table_for(cfg: &SimConfig, workload: &[TraceRecord]) -> Result<PredictionTable, SimError> {
    if let Some(t) = &cfg.predictor {
        return Ok(t.clone());
    }
    let history: Vec<(u32, u32)> = workload.iter().map(|r| (r.l_in, r.l_real)).collect();
    if history.is_empty() {
        return PredictionTable::build(&[(1, 1)], &[DEFAULT_BUCKET_EDGES[5]])
            .map_err(|e| SimError::ConfigInvalid(e.to_string()));
    }
    let max_in = history.iter().map(|h| h.0).max().unwrap_or(1);
    let mut edges = DEFAULT_BUCKET_EDGES.to_vec();
    let last = edges.len() - 1;
    edges[last] = edges[last].max(max_in);
    PredictionTable::build_merging_empty(&history, &edges).map_err(|e| SimError::ConfigInvalid(e.to_string()))
}

impl<'a> Engine<'a> {
    pub fn new(cfg: &'a SimConfig, workload: &[TraceRecord], policy: &'a Policy) -> Result<Self, SimError> {
        let table = table_for(cfg, workload)?;
        let mut noise = ChaCha8Rng::seed_from_u64(cfg.seed);
        noise.set_stream(3);
        let mut reqs = Vec::with_capacity(workload.len());
        for r in workload {
            let l_pred = match cfg.prediction {
                PredictionMode::Oracle => r.l_real,
                PredictionMode::Noisy { spread } => {
                    let u: f64 = if spread > 0.0 { noise.random_range(-spread..spread) } else { 0.0 };
                    ((r.l_real as f64 * (1.0 + u)).round() as u32).max(1)
                }
                PredictionMode::Table => table
                    .predict(r.l_in.min(table.max_input()))
                    .map_err(|e| SimError::ConfigInvalid(e.to_string()))?,
            };
            reqs.push(ReqState {
                rec: *r,
                l_pred_orig: l_pred,
                l_pred,
                first_token: None,
                placed_at: None,
                decode_start: None,
                finish: None,
                worker: None,
                rejected: false,
                ttft_exempt: false,
            });
        }
        let index = workload.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        let mut q = EventQueue::default();
        for (i, r) in workload.iter().enumerate() {
            q.push(r.arrival_time, Payload::Arrival(i));
        }
        let autoscaler = cfg.autoscale.map(Autoscaler::new);
        if let Some(a) = &autoscaler {
            if !workload.is_empty() {
                q.push(a.spec().interval, Payload::Scale);
            }
        }
        // baselines spread over a provisioned pool; best-fit opens workers lazily
        let cluster = match (policy, cfg.max_workers) {
            (Policy::Jsq | Policy::PowerOfTwo, Some(n)) if cfg.autoscale.is_none() => Cluster::fixed(cfg.kv_capacity, n),
            _ => Cluster::new(cfg.kv_capacity, cfg.max_workers),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(4);
        let mut e = Self {
            cfg,
            policy,
            reqs,
            index,
            q,
            cluster,
            running: Vec::new(),
            inflight: Vec::new(),
            opened_at: Vec::new(),
            last_active: Vec::new(),
            kv_peak: Vec::new(),
            early: Vec::new(),
            waiting: VecDeque::new(),
            handoff: VecDeque::new(),
            prefill_pool: Vec::new(),
            rng,
            table,
            last_hb: None,
            hb_pending: false,
            autoscaler,
            arrivals_left: workload.len(),
            metrics: Metrics { n_requests: workload.len(), ..Metrics::default() },
            events: Vec::new(),
            decisions: Vec::new(),
            scale_log: Vec::new(),
        };
        e.sync_worker_vecs();
        Ok(e)
    }

    fn sync_worker_vecs(&mut self) {
        let n = self.cluster.workers.len();
        self.running.resize(n, false);
        self.inflight.resize(n, (String::new(), Vec::new()));
        self.opened_at.resize(n, None);
        self.last_active.resize(n, 0.0);
        self.kv_peak.resize(n, 0.0);
        self.early.resize(n, Vec::new());
    }

    fn log(&mut self, time: f64, kind: EventKind, worker: Option<usize>, request: Option<u64>, detail: Option<String>) {
        if self.cfg.record_events {
            self.events.push(EventRecord { time, kind, worker, request, detail });
        }
    }

    fn violation(&mut self, tag: &str) {
        *self.metrics.violations.entry(tag.to_string()).or_insert(0) += 1;
    }

    fn ctx(&self, now: f64, stage: Stage) -> PlacementCtx<'a> {
        PlacementCtx::new(&self.cfg.models, self.cfg.slo, self.cfg.knobs, now, stage)
    }

    fn decode_stage(&self) -> Stage {
        match self.cfg.mode {
            SimMode::DefaultBatching => Stage::Colocated,
            SimMode::SplitPhase => Stage::DecodeOnly,
        }
    }

    pub fn run(mut self) -> SimOutput {
        while let Some((t, p)) = self.q.pop() {
            match p {
                Payload::Arrival(i) => self.on_arrival(t, i),
                Payload::Heartbeat => self.on_heartbeat(t),
                Payload::DecodeDone(w) => self.on_decode_done(t, w),
                Payload::PrefillDone(p) => self.on_prefill_done(t, p),
                Payload::Scale => self.on_scale(t),
            }
            self.metrics.makespan = self.metrics.makespan.max(t);
        }
        self.finish()
    }

    fn schedule_heartbeat(&mut self, after: f64) {
        if self.hb_pending {
            return;
        }
        let h = self.cfg.heartbeat;
        let mut k = (after / h).floor() as u64 + 1;
        if let Some(last) = self.last_hb {
            k = k.max(last + 1);
        }
        self.hb_pending = true;
        self.q.push(k as f64 * h, Payload::Heartbeat);
    }

    fn on_arrival(&mut self, t: f64, i: usize) {
        self.arrivals_left -= 1;
        let r = self.reqs[i].rec;
        self.log(t, EventKind::Arrival, None, Some(r.id), None);
        if let Some(a) = &mut self.autoscaler {
            a.observe(t, r.l_in);
        }
        self.waiting.push_back(i);
        self.schedule_heartbeat(t);
    }

    fn on_heartbeat(&mut self, now: f64) {
        self.hb_pending = false;
        self.last_hb = Some((now / self.cfg.heartbeat).round() as u64);
        let started = Instant::now();
        let n_waiting = self.waiting.len();
        match self.cfg.mode {
            SimMode::DefaultBatching => self.place_waiting(now),
            SimMode::SplitPhase => {
                self.place_prefills(now);
                let retry: Vec<usize> = self.handoff.drain(..).collect();
                for i in retry {
                    if let Outcome::Deferred = self.place(i, now, None) {
                        self.handoff.push_back(i);
                    }
                }
            }
        }
        for buf in &mut self.early {
            buf.clear();
        }
        let at = if self.cfg.fold_placer_time { now + started.elapsed().as_secs_f64() } else { now };
        self.log(now, EventKind::Heartbeat, None, None, Some(format!("waiting={n_waiting}")));
        self.kick_all(at);
        if !self.waiting.is_empty() || !self.handoff.is_empty() {
            if self.stalled() {
                self.reject_stuck(now);
            } else {
                self.schedule_heartbeat(now);
            }
        }
    }

    /// Nothing left that could free capacity for the queued requests.
    fn stalled(&self) -> bool {
        self.arrivals_left == 0
            && !self.running.iter().any(|&r| r)
            && self.prefill_pool.iter().all(|p| p.batch.is_empty() && p.queue.is_empty())
            && self.cluster.workers.iter().all(|w| w.residents.is_empty())
    }

    fn reject_stuck(&mut self, now: f64) {
        let stuck: Vec<usize> = self.waiting.drain(..).chain(self.handoff.drain(..)).collect();
        for i in stuck {
            self.reject(i, now, None);
        }
    }

    fn place_waiting(&mut self, now: f64) {
        let mut bf = match self.policy {
            Policy::BestFit => Some(BestFitIndex::new(&self.cluster, &self.ctx(now, Stage::Colocated))),
            _ => None,
        };
        let mut deferred = VecDeque::new();
        let mut placed = Vec::new();
        while let Some(i) = self.waiting.pop_front() {
            match self.place(i, now, bf.as_mut()) {
                Outcome::Placed(_) => placed.push(self.reqs[i].rec.id),
                Outcome::Deferred => deferred.push_back(i),
                Outcome::Rejected => {}
            }
        }
        self.waiting = deferred;
        if self.cfg.rebalance && !placed.is_empty() {
            self.rebalance(now, &placed);
        }
    }

    fn reject(&mut self, i: usize, now: f64, tag: Option<Constraint>) {
        let r = &mut self.reqs[i];
        r.rejected = true;
        let id = r.rec.id;
        self.violation("reject");
        self.decisions.push(Decision {
            time: now,
            request_id: id,
            worker_id: None,
            policy: self.policy.name().to_string(),
            violated_tag: tag.map(|t| t.tag().to_string()),
        });
    }

    /// Places request `i` on a decode-capable worker.
    fn place(&mut self, i: usize, now: f64, bf: Option<&mut BestFitIndex>) -> Outcome {
        let stage = self.decode_stage();
        let ctx = self.ctx(now, stage);
        let r = &self.reqs[i];
        let mut c = Candidate {
            id: r.rec.id,
            arrival_time: r.rec.arrival_time,
            l_in: r.rec.l_in,
            l_pred: r.l_pred.max(if stage == Stage::DecodeOnly { 2 } else { 1 }),
            l_out: if stage == Stage::DecodeOnly { 1 } else { 0 },
            ttft_exempt: r.ttft_exempt || stage == Stage::DecodeOnly,
        };
        let m = self.cluster.kv_capacity;
        let mut alone = infeasible_alone(&c, m, &ctx);
        if alone == Some(Constraint::Ttft) {
            c.ttft_exempt = true;
            self.reqs[i].ttft_exempt = true;
            alone = infeasible_alone(&c, m, &ctx);
        }
        if let Some(tag) = alone {
            self.reject(i, now, Some(tag));
            return Outcome::Rejected;
        }
        let before = self.cluster.workers.len();
        let placed = match self.policy {
            Policy::BestFit => {
                let res = match bf {
                    Some(idx) => idx.place(&mut self.cluster, &c, &ctx),
                    None => BestFitIndex::new(&self.cluster, &ctx).place(&mut self.cluster, &c, &ctx),
                };
                res.map(|w| (w, None))
            }
            Policy::Jsq => place_jsq(&mut self.cluster, &c, &ctx, self.cfg.load_metric),
            Policy::PowerOfTwo => place_power_of_two(&mut self.cluster, &c, &ctx, self.cfg.load_metric, &mut self.rng),
            Policy::ExactReplay(map) => match map.get(&c.id) {
                None => Err(PlaceError::Empty),
                Some(&w) => {
                    while self.cluster.workers.len() <= w && self.cluster.open_worker(now).is_some() {}
                    if w < self.cluster.workers.len() {
                        let tag = WorkerSummary::of(&self.cluster.workers[w], &ctx).check(&c, &ctx).err();
                        self.cluster.workers[w].admit(&c);
                        Ok((w, tag))
                    } else {
                        Err(PlaceError::Infeasible { max_workers: self.cluster.max_workers.unwrap_or(0) })
                    }
                }
            },
        };
        if self.cluster.workers.len() != before {
            self.sync_worker_vecs();
        }
        match placed {
            Ok((w, tag)) => {
                if let Some(t) = tag {
                    self.violation(t.tag());
                }
                if self.opened_at[w].is_none() {
                    self.opened_at[w] = Some(now);
                    self.metrics.workers_opened += 1;
                }
                let r = &mut self.reqs[i];
                r.worker = Some(w);
                if stage == Stage::DecodeOnly {
                    r.placed_at = Some(now);
                }
                if let Some(res) = self.cluster.workers[w].residents.last_mut() {
                    res.ttft_exempt = c.ttft_exempt;
                    // split handoff: already holds the first token
                    if stage == Stage::DecodeOnly {
                        res.l_out = 1;
                    }
                }
                self.decisions.push(Decision {
                    time: now,
                    request_id: c.id,
                    worker_id: Some(w),
                    policy: self.policy.name().to_string(),
                    violated_tag: tag.map(|t| t.tag().to_string()),
                });
                Outcome::Placed(w)
            }
            Err(PlaceError::PoolExhausted { .. }) => {
                self.violation("pool_exhausted");
                Outcome::Deferred
            }
            Err(PlaceError::RequestInfeasibleAlone { tag, .. }) => {
                self.reject(i, now, Some(tag));
                Outcome::Rejected
            }
            Err(_) => {
                self.reject(i, now, None);
                Outcome::Rejected
            }
        }
    }

    fn rebalance(&mut self, now: f64, placed: &[u64]) {
        let decode = self.cfg.models.decode;
        let mut errors: Vec<WorkerErrorState> = Vec::with_capacity(self.cluster.workers.len());
        for (w, worker) in self.cluster.workers.iter().enumerate() {
            let mut evs: Vec<ErrorEvent> = worker
                .residents
                .iter()
                .filter_map(|r| {
                    let s = &self.reqs[self.index[&r.id]];
                    (s.l_pred > s.l_pred_orig).then(|| ErrorEvent::Overrun { extra: s.l_pred - s.l_pred_orig })
                })
                .collect();
            evs.extend(self.early[w].iter().copied());
            errors.push(update_errors(WorkerErrorState::new(&decode), &evs));
        }
        let ctx = self.ctx(now, Stage::Colocated);
        let report = rebalancer::rebalance(&mut self.cluster, &mut errors, placed, &ctx);
        self.metrics.rebalance_max_delta = self.metrics.rebalance_max_delta.max(report.after - report.before);
        for mv in report.moves {
            self.metrics.rebalance_moves += 1;
            let i = self.index[&mv.request_id];
            self.reqs[i].worker = Some(mv.to);
            self.decisions.push(Decision {
                time: now,
                request_id: mv.request_id,
                worker_id: Some(mv.to),
                policy: "rebalance".into(),
                violated_tag: None,
            });
        }
    }

    fn kick_all(&mut self, now: f64) {
        for w in 0..self.cluster.workers.len() {
            if !self.running[w] && !self.cluster.workers[w].residents.is_empty() {
                self.start_iteration(w, now);
            }
        }
        for p in 0..self.prefill_pool.len() {
            if self.prefill_pool[p].batch.is_empty() && !self.prefill_pool[p].queue.is_empty() {
                self.start_prefill_batch(p, now);
            }
        }
        self.note_usage();
    }

    fn note_usage(&mut self) {
        let decode = self.cluster.workers.iter().filter(|w| !w.residents.is_empty()).count();
        let prefill = self.prefill_pool.iter().filter(|p| !p.batch.is_empty() || !p.queue.is_empty()).count();
        self.metrics.workers_used_max = self.metrics.workers_used_max.max(decode + prefill);
    }

    fn abort_resident(&mut self, w: usize, pos: usize) {
        let r = self.cluster.workers[w].residents.remove(pos);
        let i = self.index[&r.id];
        self.reqs[i].rejected = true;
        self.violation("abort");
    }

    /// Starts the next iteration on decode-capable worker `w` at `t0`.
    fn start_iteration(&mut self, w: usize, t0: f64) {
        let split = self.cfg.mode == SimMode::SplitPhase;
        let kv = self.cfg.models.kv;
        loop {
            let worker = &self.cluster.workers[w];
            if worker.residents.is_empty() {
                return;
            }
            let cap = worker.kv_capacity;
            let pending: Vec<usize> =
                (0..worker.residents.len()).filter(|&p| worker.residents[p].phase == Phase::Pending).collect();
            let decoding: Vec<usize> =
                (0..worker.residents.len()).filter(|&p| worker.residents[p].phase == Phase::Decoding).collect();
            let held_v: Vec<f64> = worker.residents.iter().map(|r| kv.kv_usage(r.l_in, r.l_out)).collect();
            let next_v: Vec<f64> = worker.residents.iter().map(|r| kv.kv_usage(r.l_in, r.l_out + 1)).collect();
            let n_res = worker.residents.len();
            let held = |p: usize| held_v[p];
            let next = |p: usize| next_v[p];

            if !split && !pending.is_empty() {
                let base: f64 = decoding.iter().map(|&p| held(p)).sum();
                let demand = base + pending.iter().map(|&p| next(p)).sum::<f64>();
                self.kv_peak[w] = self.kv_peak[w].max(demand);
                let mut used = base;
                let mut admitted = Vec::new();
                for &p in &pending {
                    let need = next(p);
                    if used + need <= cap + KV_EPS * cap.max(1.0) {
                        used += need;
                        admitted.push(p);
                    }
                }
                if admitted.len() < pending.len() {
                    self.metrics.kv_overflow_events += 1;
                    self.violation("kv_defer");
                }
                if !admitted.is_empty() {
                    self.run_prefill(w, t0, &admitted, &decoding);
                    return;
                }
                if decoding.is_empty() {
                    self.abort_resident(w, pending[0]);
                    continue;
                }
            }

            let mut batch: Vec<usize> = if split { (0..n_res).collect() } else { decoding };
            if batch.is_empty() {
                return;
            }
            let mut demand: f64 = batch.iter().map(|&p| next(p)).sum();
            self.kv_peak[w] = self.kv_peak[w].max(demand);
            if demand > cap + KV_EPS * cap.max(1.0) {
                self.metrics.kv_overflow_events += 1;
                let mut evict = Vec::new();
                while demand > cap + KV_EPS * cap.max(1.0) && batch.len() > 1 {
                    let p = batch.pop().expect("non-empty batch");
                    demand -= next(p);
                    if self.cluster.workers[w].residents[p].phase == Phase::Decoding {
                        evict.push(p);
                    }
                }
                if demand > cap + KV_EPS * cap.max(1.0) {
                    self.abort_resident(w, batch[0]);
                    continue;
                }
                for p in evict {
                    self.cluster.workers[w].residents[p].phase = Phase::Pending;
                    self.metrics.evictions += 1;
                    self.violation("kv_evict");
                }
            }
            self.run_decode(w, t0, &batch);
            return;
        }
    }

    /// Applies one generated token to resident `pos` of worker `w` at `t1`.
    /// Returns whether the request finished.
    fn token(&mut self, w: usize, pos: usize, t1: f64) -> bool {
        let res = &mut self.cluster.workers[w].residents[pos];
        let i = self.index[&res.id];
        let s = &mut self.reqs[i];
        if res.l_out == 0 {
            s.first_token = Some(t1);
        } else {
            res.n_dec += 1;
        }
        res.l_out += 1;
        res.phase = Phase::Decoding;
        res.t_dec = t1 - s.first_token.expect("first token precedes decoding");
        if res.l_out >= s.rec.l_real {
            s.finish = Some(t1);
            if s.rec.l_real < s.l_pred_orig {
                self.early[w].push(ErrorEvent::EarlyFinish { l_pred: s.l_pred_orig, l_real: s.rec.l_real });
            }
            return true;
        }
        if res.l_out >= res.l_pred {
            let l_in = res.l_in.min(self.table.max_input());
            let again = self.table.repredict(l_in, res.l_out).map(|r| r.tokens).unwrap_or(res.l_out + 1);
            res.l_pred = again;
            s.l_pred = again;
        }
        false
    }

    fn run_prefill(&mut self, w: usize, t0: f64, admitted: &[usize], decoding: &[usize]) {
        let worker = &self.cluster.workers[w];
        let tokens: u64 = admitted.iter().map(|&p| (worker.residents[p].l_in + worker.residents[p].l_out) as u64).sum();
        let t1 = t0 + self.cfg.models.prefill.prefill_time(tokens);
        for &p in decoding {
            let res = &mut self.cluster.workers[w].residents[p];
            let first = self.reqs[self.index[&res.id]].first_token.expect("decoding has a first token");
            res.t_dec = t1 - first;
        }
        let mut done = Vec::new();
        for &p in admitted {
            if self.token(w, p, t1) {
                done.push(p);
            }
        }
        self.finish_iteration(w, t1, done, format!("prefill n={} tokens={tokens}", admitted.len()));
    }

    fn run_decode(&mut self, w: usize, t0: f64, batch: &[usize]) {
        let worker = &self.cluster.workers[w];
        let total: f64 = batch.iter().map(|&p| (worker.residents[p].l_in + worker.residents[p].l_out) as f64).sum();
        let t1 = t0 + self.cfg.models.decode.iter_time_total(batch.len() as u32, total);
        if self.cfg.mode == SimMode::SplitPhase {
            for &p in batch {
                let i = self.index[&self.cluster.workers[w].residents[p].id];
                self.reqs[i].decode_start.get_or_insert(t0);
            }
        }
        let mut done = Vec::new();
        for &p in batch {
            if self.token(w, p, t1) {
                done.push(p);
            }
        }
        self.finish_iteration(w, t1, done, format!("decode b={}", batch.len()));
    }

    fn finish_iteration(&mut self, w: usize, t1: f64, mut done: Vec<usize>, detail: String) {
        done.sort_unstable();
        let mut finished = Vec::with_capacity(done.len());
        for p in done.into_iter().rev() {
            let r = self.cluster.workers[w].residents.remove(p);
            finished.push(self.index[&r.id]);
        }
        finished.reverse();
        let worker = &mut self.cluster.workers[w];
        worker.busy_until = t1;
        self.running[w] = true;
        self.last_active[w] = t1;
        self.inflight[w] = (detail, finished);
        self.q.push(t1, Payload::DecodeDone(w));
    }

    fn on_decode_done(&mut self, t: f64, w: usize) {
        self.running[w] = false;
        let (detail, finished) = std::mem::take(&mut self.inflight[w]);
        self.log(t, EventKind::IterationDone, Some(w), None, Some(detail));
        self.metrics.n_finished += finished.len();
        for i in finished {
            let id = self.reqs[i].rec.id;
            self.log(t, EventKind::RequestDone, Some(w), Some(id), None);
        }
        if !self.cluster.workers[w].residents.is_empty() {
            self.start_iteration(w, t);
        }
        self.note_usage();
    }

    fn place_prefills(&mut self, now: f64) {
        let prefill = self.cfg.models.prefill;
        let t_pre = self.cfg.slo.t_pre;
        while let Some(i) = self.waiting.pop_front() {
            let r = self.reqs[i].rec;
            let mut best: Option<(usize, f64)> = None;
            let mut chosen = None;
            for (p, pw) in self.prefill_pool.iter().enumerate() {
                let start = now.max(pw.busy_until);
                let tokens: u64 = pw.queue.iter().map(|&j| self.reqs[j].rec.l_in as u64).sum::<u64>() + r.l_in as u64;
                let end = start + prefill.prefill_time(tokens);
                let earliest = pw
                    .queue
                    .iter()
                    .map(|&j| self.reqs[j].rec.arrival_time)
                    .fold(r.arrival_time, f64::min);
                if end - earliest <= t_pre + SLO_EPS {
                    chosen = Some(p);
                    break;
                }
                if best.is_none_or(|b| end < b.1) {
                    best = Some((p, end));
                }
            }
            let p = match chosen {
                Some(p) => p,
                None if self.cfg.max_prefill_workers.is_none_or(|m| self.prefill_pool.len() < m) => {
                    self.prefill_pool.push(PrefillWorker { busy_until: now, ..PrefillWorker::default() });
                    self.metrics.workers_opened += 1;
                    self.prefill_pool.len() - 1
                }
                None => best.expect("bounded pool is non-empty").0,
            };
            let pw = &mut self.prefill_pool[p];
            pw.opened.get_or_insert(now);
            pw.queue.push(i);
            self.decisions.push(Decision {
                time: now,
                request_id: r.id,
                worker_id: Some(p),
                policy: "prefill".into(),
                violated_tag: None,
            });
        }
    }

    fn start_prefill_batch(&mut self, p: usize, t0: f64) {
        let pw = &mut self.prefill_pool[p];
        let batch = std::mem::take(&mut pw.queue);
        let tokens: u64 = batch.iter().map(|&j| self.reqs[j].rec.l_in as u64).sum();
        let t1 = t0 + self.cfg.models.prefill.prefill_time(tokens);
        pw.busy_until = t1;
        pw.last_active = t1;
        pw.batch = batch;
        self.q.push(t1, Payload::PrefillDone(p));
    }

    fn on_prefill_done(&mut self, t: f64, p: usize) {
        let batch = std::mem::take(&mut self.prefill_pool[p].batch);
        self.log(t, EventKind::IterationDone, None, None, Some(format!("prefill-pool {p} n={}", batch.len())));
        for i in batch {
            let s = &mut self.reqs[i];
            s.first_token = Some(t);
            if s.rec.l_real <= 1 {
                s.finish = Some(t);
                self.metrics.n_finished += 1;
                let id = s.rec.id;
                self.log(t, EventKind::RequestDone, None, Some(id), None);
                continue;
            }
            match self.place(i, t, None) {
                Outcome::Placed(w) => {
                    if !self.running[w] {
                        self.start_iteration(w, t);
                    }
                }
                Outcome::Deferred => {
                    self.handoff.push_back(i);
                    self.schedule_heartbeat(t);
                }
                Outcome::Rejected => {}
            }
        }
        if !self.prefill_pool[p].queue.is_empty() {
            self.start_prefill_batch(p, t);
        }
        self.note_usage();
    }

    fn on_scale(&mut self, now: f64) {
        let Some(a) = &mut self.autoscaler else { return };
        let interval = a.spec().interval;
        if let Some(d) = a.decide(now) {
            let n = d.n_workers as usize;
            self.cluster.max_workers = Some(n);
            for w in &mut self.cluster.workers {
                w.draining = w.id >= n;
            }
            self.scale_log.push(d);
            self.log(now, EventKind::ScaleChange, None, None, Some(format!("workers={n} groups={}", d.n_groups)));
        }
        let busy = self.arrivals_left > 0 || !self.waiting.is_empty();
        if busy {
            self.q.push(now + interval, Payload::Scale);
        }
    }

    fn finish(mut self) -> SimOutput {
        let slo = self.cfg.slo;
        let mut ttfts = Vec::new();
        let mut atgts = Vec::new();
        let (mut ok_all, mut ok_ttft, mut ok_atgt) = (0usize, 0usize, 0usize);
        let mut rows = Vec::with_capacity(self.reqs.len());
        for s in &self.reqs {
            let ttft = if s.rejected { None } else { s.first_token.map(|f| f - s.rec.arrival_time) };
            // split mode: waiting for the decode worker's current iteration
            // overlaps the KV handoff and is not charged
            let start = match (self.cfg.mode, s.first_token, s.placed_at, s.decode_start) {
                (SimMode::SplitPhase, Some(f), Some(p), Some(d)) => Some(f + (d - p)),
                _ => s.first_token,
            };
            let atgt = match (s.rejected, start, s.finish) {
                (false, Some(f), Some(e)) if s.rec.l_real >= 2 => Some((e - f) / (s.rec.l_real - 1) as f64),
                _ => None,
            };
            let done = !s.rejected && s.finish.is_some();
            let t_ok = done && ttft.is_some_and(|t| t <= slo.t_pre + SLO_EPS);
            let a_ok = done && (s.rec.l_real < 2 || atgt.is_some_and(|a| a <= slo.t_dec + SLO_EPS));
            if let Some(t) = ttft {
                ttfts.push(t);
            }
            if let Some(a) = atgt {
                atgts.push(a);
            }
            ok_ttft += usize::from(t_ok);
            ok_atgt += usize::from(a_ok);
            ok_all += usize::from(t_ok && a_ok);
            if s.rejected {
                self.metrics.n_rejected += 1;
            }
            rows.push(RequestRow {
                id: s.rec.id,
                arrival: s.rec.arrival_time,
                ttft,
                atgt,
                slo_ok: t_ok && a_ok,
                worker: s.worker,
            });
        }
        let n = self.reqs.len();
        let frac = |k: usize| if n == 0 { 1.0 } else { k as f64 / n as f64 };
        let m = &mut self.metrics;
        m.slo_attainment = frac(ok_all);
        m.ttft_attainment = frac(ok_ttft);
        m.atgt_attainment = frac(ok_atgt);
        m.p99_ttft = nearest_rank(&ttfts, 99.0);
        m.p99_atgt = nearest_rank(&atgts, 99.0);
        m.mean_ttft = mean(&ttfts);
        m.mean_atgt = mean(&atgts);
        m.kv_peak_per_worker = self.kv_peak.clone();
        m.kv_peak_max = self.kv_peak.iter().copied().fold(0.0, f64::max);
        let gpus = self.cfg.gpus_per_worker as f64;
        let decode_span: f64 =
            self.opened_at.iter().zip(&self.last_active).filter_map(|(o, &l)| o.map(|o| (l - o).max(0.0))).sum();
        let prefill_span: f64 =
            self.prefill_pool.iter().filter_map(|p| p.opened.map(|o| (p.last_active - o).max(0.0))).sum();
        m.gpu_seconds = (decode_span + prefill_span) * gpus;
        SimOutput {
            metrics: self.metrics,
            requests: rows,
            events: self.events,
            decisions: self.decisions,
            scale_log: self.scale_log,
        }
    }
}
