use std::cmp::Reverse;

use ordered_float::OrderedFloat;

use super::rank::{Key, RankTree};
use super::{infeasible_alone, need, Candidate, Cluster, PlaceError, PlacementCtx, WorkerId, WorkerSummary};

/// Workers ordered by descending capacity norm (ties to the lower id), with
/// cached feasibility summaries. Build one per heartbeat and feed it every
/// request of that heartbeat; admissions keep it current.
///
/// The order is a treap carrying per-subtree room bounds, so a search skips
/// runs of saturated workers instead of checking each one.
#[derive(Debug, Clone)]
pub struct BestFitIndex {
    order: RankTree,
    keys: Vec<Option<Key>>,
    summaries: Vec<Option<WorkerSummary>>,
}

impl BestFitIndex {
    pub fn new(cluster: &Cluster, ctx: &PlacementCtx<'_>) -> Self {
        let mut idx = Self { order: RankTree::default(), keys: Vec::new(), summaries: Vec::new() };
        for w in &cluster.workers {
            idx.refresh(cluster, w.id, ctx);
        }
        idx
    }

    /// Re-reads worker `id` after it was changed outside the index.
    pub fn refresh(&mut self, cluster: &Cluster, id: WorkerId, ctx: &PlacementCtx<'_>) {
        if self.keys.len() <= id {
            self.keys.resize(id + 1, None);
            self.summaries.resize(id + 1, None);
        }
        let w = &cluster.workers[id];
        if w.draining {
            if let Some(old) = self.keys[id].take() {
                self.order.remove(&old);
            }
            self.summaries[id] = None;
            return;
        }
        self.summaries[id] = Some(WorkerSummary::of(w, ctx));
        self.rekey(id, ctx);
    }

    fn rekey(&mut self, id: WorkerId, ctx: &PlacementCtx<'_>) {
        if let Some(old) = self.keys[id].take() {
            self.order.remove(&old);
        }
        let s = self.summaries[id].as_ref().expect("rekeying a summarised worker");
        let key = (Reverse(OrderedFloat(s.norm(ctx))), id);
        self.order.insert(key, s.room(ctx));
        self.keys[id] = Some(key);
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.len() == 0
    }

    /// Worker ids from fullest to emptiest.
    pub fn ranking(&self) -> impl Iterator<Item = WorkerId> + '_ {
        self.order.keys().into_iter().map(|k| k.1)
    }

    /// First feasible worker in ranking order, without admitting.
    pub fn find(&self, c: &Candidate, ctx: &PlacementCtx<'_>) -> Option<WorkerId> {
        let mut empty_failed = false;
        let hit = self.order.first(&need(c, ctx), &mut |&(Reverse(norm), id)| {
            let s = self.summaries[id].as_ref().expect("ranked workers have summaries");
            // empty workers differ only in when they became idle; one failure
            // at norm 0 predicts the rest
            if norm.0 == 0.0 && s.count == 0 {
                if empty_failed {
                    return false;
                }
                let ok = s.check(c, ctx).is_ok();
                empty_failed = !ok && s.busy_until <= ctx.now;
                return ok;
            }
            s.check(c, ctx).is_ok()
        });
        hit.map(|k| k.1)
    }

    fn admit(&mut self, cluster: &mut Cluster, id: WorkerId, c: &Candidate, ctx: &PlacementCtx<'_>) {
        cluster.workers[id].admit(c);
        self.summaries[id].as_mut().expect("admitting to a summarised worker").admit(c, ctx);
        self.rekey(id, ctx);
    }

    /// Best-fit placement of one request: the feasible worker with the
    /// largest capacity norm, else a newly opened worker.
    pub fn place(
        &mut self,
        cluster: &mut Cluster,
        c: &Candidate,
        ctx: &PlacementCtx<'_>,
    ) -> Result<WorkerId, PlaceError> {
        if let Some(tag) = infeasible_alone(c, cluster.kv_capacity, ctx) {
            return Err(PlaceError::RequestInfeasibleAlone { id: c.id, tag });
        }
        let id = match self.find(c, ctx) {
            Some(id) => id,
            None => {
                let id = cluster
                    .open_worker(ctx.now)
                    .ok_or(PlaceError::PoolExhausted { max: cluster.max_workers.unwrap_or(0) })?;
                self.refresh(cluster, id, ctx);
                id
            }
        };
        self.admit(cluster, id, c, ctx);
        Ok(id)
    }
}

/// Places `c` on the fullest feasible worker of `cluster`, opening a worker
/// when none is feasible.
pub fn place_best_fit(cluster: &mut Cluster, c: &Candidate, ctx: &PlacementCtx<'_>) -> Result<WorkerId, PlaceError> {
    BestFitIndex::new(cluster, ctx).place(cluster, c, ctx)
}
