//! Correction of output-length prediction errors by re-routing requests that
//! have not started yet.
//!
//! Each worker carries an error point `(l_e, b_e)`: extra tokens and extra
//! requests relative to what placement assumed. The point is measured against
//! the line `alpha * l + beta * b + c = 0` through it, with `alpha = k2` and
//! `beta = c2` (the token/batch trade-off of the decode context limit), so
//! `c = -(alpha * l_e + beta * b_e)`. The distance `|c| / |(alpha, beta)|`
//! is how far the worker has drifted from its planned operating point.
//! Moving a new request from `x` to `y` shifts `(l_pred, 1)` of error from
//! `x` to `y`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perf_models::DecodeModel;
use crate::placement::{Candidate, Cluster, Phase, PlacementCtx, RequestId, WorkerId, WorkerSummary};

#[derive(Debug, Error, PartialEq)]
pub enum RebalanceError {
    #[error("error line is undefined when alpha and beta are both zero")]
    DegenerateModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerErrorState {
    pub l_e: f64,
    pub b_e: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Prediction-error notifications for one worker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorEvent {
    /// A request outlived its prediction; `extra` is the re-predicted length
    /// beyond the original prediction.
    Overrun { extra: u32 },
    /// A request finished before its prediction.
    EarlyFinish { l_pred: u32, l_real: u32 },
}

impl WorkerErrorState {
    pub fn new(decode: &DecodeModel) -> Self {
        Self { l_e: 0.0, b_e: 0.0, alpha: decode.k2, beta: decode.c2 }
    }

    pub fn c(&self) -> f64 {
        -(self.alpha * self.l_e + self.beta * self.b_e)
    }

    pub fn distance(&self) -> Result<f64, RebalanceError> {
        let n = self.alpha.hypot(self.beta);
        if n == 0.0 {
            return Err(RebalanceError::DegenerateModel);
        }
        Ok(self.c().abs() / n)
    }

    fn distance_unchecked(&self) -> f64 {
        self.c().abs() / self.alpha.hypot(self.beta)
    }

    fn shifted(&self, tokens: f64, requests: f64) -> Self {
        Self { l_e: self.l_e + tokens, b_e: self.b_e + requests, ..*self }
    }
}

/// Applies `events` to `state`.
pub fn update_errors(mut state: WorkerErrorState, events: &[ErrorEvent]) -> WorkerErrorState {
    for e in events {
        match *e {
            ErrorEvent::Overrun { extra } => {
                state.l_e += extra as f64;
                state.b_e += 1.0;
            }
            ErrorEvent::EarlyFinish { l_pred, l_real } => {
                state.l_e += l_real as f64 - l_pred as f64;
                state.b_e -= 1.0;
            }
        }
    }
    state
}

pub fn total_distance(states: &[WorkerErrorState]) -> f64 {
    states.iter().map(WorkerErrorState::distance_unchecked).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub request_id: RequestId,
    pub from: WorkerId,
    pub to: WorkerId,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RebalanceReport {
    pub moves: Vec<Move>,
    pub before: f64,
    pub after: f64,
}

/// First-improvement local search over single moves of `movable` requests,
/// at most `movable.len()` moves. A move is taken only if it strictly lowers
/// the summed error distance and the destination, a worker already in use,
/// stays feasible. Requests that already started are never moved.
pub fn rebalance(
    cluster: &mut Cluster,
    errors: &mut [WorkerErrorState],
    movable: &[RequestId],
    ctx: &PlacementCtx<'_>,
) -> RebalanceReport {
    assert_eq!(errors.len(), cluster.workers.len(), "one error state per worker");
    let before = total_distance(errors);
    let mut report = RebalanceReport { moves: Vec::new(), before, after: before };
    if errors.iter().all(|e| e.l_e == 0.0 && e.b_e == 0.0) {
        return report;
    }
    let locate = |cluster: &Cluster, id: RequestId| {
        cluster.workers.iter().find_map(|w| {
            w.residents
                .iter()
                .find(|r| r.id == id && r.phase == Phase::Pending && r.l_out == 0)
                .map(|r| (w.id, r.clone()))
        })
    };
    let budget = movable.len();
    while report.moves.len() < budget {
        let mut taken = None;
        'search: for &rid in movable {
            let Some((x, r)) = locate(cluster, rid) else { continue };
            let tokens = r.l_pred as f64;
            let ex = errors[x].shifted(-tokens, -1.0);
            for y in 0..cluster.workers.len() {
                let wy = &cluster.workers[y];
                if y == x || wy.draining || wy.is_empty() {
                    continue;
                }
                let ey = errors[y].shifted(tokens, 1.0);
                let delta = ex.distance_unchecked() + ey.distance_unchecked()
                    - errors[x].distance_unchecked()
                    - errors[y].distance_unchecked();
                if delta >= -1e-12 {
                    continue;
                }
                let c = Candidate {
                    id: r.id,
                    arrival_time: r.arrival_time,
                    l_in: r.l_in,
                    l_pred: r.l_pred,
                    l_out: 0,
                    ttft_exempt: r.ttft_exempt,
                };
                if WorkerSummary::of(wy, ctx).check(&c, ctx).is_ok() {
                    taken = Some((rid, x, y, ex, ey, c));
                    break 'search;
                }
            }
        }
        let Some((rid, x, y, ex, ey, c)) = taken else { break };
        cluster.workers[x].remove(rid).expect("located above");
        cluster.workers[y].admit(&c);
        errors[x] = ex;
        errors[y] = ey;
        report.moves.push(Move { request_id: rid, from: x, to: y });
    }
    report.after = total_distance(errors);
    report
}
