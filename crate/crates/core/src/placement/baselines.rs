//! Load-balancing baselines that ignore the SLO constraints: join the
//! shortest queue and power-of-two choices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{infeasible_alone, Candidate, Cluster, Constraint, PlaceError, PlacementCtx, WorkerId, WorkerSummary};

/// Queue length used to compare workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadMetric {
    /// Number of resident requests.
    #[default]
    BatchSize,
    /// Sum of predicted remaining tokens (input plus predicted output).
    PredictedTokens,
}

impl LoadMetric {
    fn load(&self, cluster: &Cluster, id: WorkerId) -> u64 {
        let w = &cluster.workers[id];
        match self {
            LoadMetric::BatchSize => w.residents.len() as u64,
            LoadMetric::PredictedTokens => {
                w.residents.iter().map(|r| r.l_in as u64 + r.l_pred.saturating_sub(r.l_out) as u64).sum()
            }
        }
    }
}

fn eligible(cluster: &Cluster) -> Vec<WorkerId> {
    cluster.workers.iter().filter(|w| !w.draining).map(|w| w.id).collect()
}

/// Admits `c` to `id` unless its KV footprint does not fit and a fresh worker
/// can be opened. Returns the worker and the constraint the admission breaks.
fn commit(
    cluster: &mut Cluster,
    id: WorkerId,
    c: &Candidate,
    ctx: &PlacementCtx<'_>,
) -> (WorkerId, Option<Constraint>) {
    let verdict = WorkerSummary::of(&cluster.workers[id], ctx).check(c, ctx);
    let id = match verdict {
        Err(Constraint::KvCapacity) => cluster.open_worker(ctx.now).unwrap_or(id),
        _ => id,
    };
    let verdict = WorkerSummary::of(&cluster.workers[id], ctx).check(c, ctx);
    cluster.workers[id].admit(c);
    (id, verdict.err())
}

fn first_worker(cluster: &mut Cluster, c: &Candidate, ctx: &PlacementCtx<'_>) -> Result<WorkerId, PlaceError> {
    if let Some(tag) = infeasible_alone(c, cluster.kv_capacity, ctx).filter(|t| *t == Constraint::KvCapacity) {
        return Err(PlaceError::RequestInfeasibleAlone { id: c.id, tag });
    }
    cluster.open_worker(ctx.now).ok_or(PlaceError::PoolExhausted { max: cluster.max_workers.unwrap_or(0) })
}

/// Join the shortest queue: fewest resident requests, ties to the lowest id.
/// A new worker is opened only when the request's KV footprint does not fit.
pub fn place_jsq(
    cluster: &mut Cluster,
    c: &Candidate,
    ctx: &PlacementCtx<'_>,
    metric: LoadMetric,
) -> Result<(WorkerId, Option<Constraint>), PlaceError> {
    let ids = eligible(cluster);
    let Some(&best) = ids.iter().min_by_key(|&&id| (metric.load(cluster, id), id)) else {
        let id = first_worker(cluster, c, ctx)?;
        return Ok(commit(cluster, id, c, ctx));
    };
    Ok(commit(cluster, best, c, ctx))
}

/// Power-of-two choices: two distinct workers sampled uniformly, the shorter
/// queue wins (ties to the lower id).
pub fn place_power_of_two<R: Rng + ?Sized>(
    cluster: &mut Cluster,
    c: &Candidate,
    ctx: &PlacementCtx<'_>,
    metric: LoadMetric,
    rng: &mut R,
) -> Result<(WorkerId, Option<Constraint>), PlaceError> {
    let ids = eligible(cluster);
    let chosen = match ids.len() {
        0 => first_worker(cluster, c, ctx)?,
        1 => ids[0],
        n => {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            let (a, b) = (ids[a], ids[b]);
            let key = |id| (metric.load(cluster, id), id);
            if key(a) <= key(b) {
                a
            } else {
                b
            }
        }
    };
    Ok(commit(cluster, chosen, c, ctx))
}
