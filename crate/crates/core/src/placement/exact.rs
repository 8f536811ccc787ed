//! Exhaustive branch-and-bound for small instances; serves as the oracle the
//! heuristic is measured against.

use std::collections::BTreeMap;

use super::{Assignment, Candidate, Cluster, PlaceError, PlacementCtx, WorkerId, WorkerSummary};

pub const MAX_EXACT_REQUESTS: usize = 12;

struct Search<'a, 'c> {
    reqs: Vec<Candidate>,
    ctx: &'a PlacementCtx<'c>,
    slots: Vec<WorkerSummary>,
    occupied: Vec<bool>,
    choice: Vec<WorkerId>,
    best: Option<(usize, Vec<WorkerId>)>,
}

impl Search<'_, '_> {
    fn used(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    fn go(&mut self, depth: usize, used: usize) {
        if self.best.as_ref().is_some_and(|(b, _)| used >= *b) {
            return;
        }
        if depth == self.reqs.len() {
            self.best = Some((used, self.choice.clone()));
            return;
        }
        let c = self.reqs[depth];
        let mut tried_empty = false;
        for slot in 0..self.slots.len() {
            let was_occupied = self.occupied[slot];
            if !was_occupied {
                // unused workers are interchangeable once their idle time is
                // equal; try only the first
                if tried_empty && self.slots[slot].busy_until <= self.ctx.now {
                    continue;
                }
                tried_empty |= self.slots[slot].busy_until <= self.ctx.now;
            }
            if self.slots[slot].check(&c, self.ctx).is_err() {
                continue;
            }
            let saved = self.slots[slot].clone();
            self.slots[slot].admit(&c, self.ctx);
            self.occupied[slot] = true;
            self.choice.push(slot);
            self.go(depth + 1, used + usize::from(!was_occupied));
            self.choice.pop();
            self.occupied[slot] = was_occupied;
            self.slots[slot] = saved;
        }
    }
}

/// Assignment of `new` onto `ongoing` (whose residents stay put) plus fresh
/// workers, minimizing the number of workers in use, with at most
/// `max_workers` workers in total.
pub fn solve_exact(
    new: &[Candidate],
    ongoing: &Cluster,
    ctx: &PlacementCtx<'_>,
    max_workers: usize,
) -> Result<Assignment, PlaceError> {
    if new.len() > MAX_EXACT_REQUESTS {
        return Err(PlaceError::TooLarge { n: new.len(), max: MAX_EXACT_REQUESTS });
    }
    let n_slots = max_workers.max(ongoing.workers.len());
    let mut slots: Vec<WorkerSummary> = ongoing.workers.iter().map(|w| WorkerSummary::of(w, ctx)).collect();
    let mut occupied: Vec<bool> = ongoing.workers.iter().map(|w| !w.is_empty()).collect();
    while slots.len() < n_slots {
        slots.push(WorkerSummary::of(&ctx.empty_worker(slots.len(), ongoing.kv_capacity), ctx));
        occupied.push(false);
    }
    // larger requests first tighten the bound early
    let mut order: Vec<usize> = (0..new.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse((new[i].l_in + new[i].l_pred, new[i].l_in)));
    let reqs: Vec<Candidate> = order.iter().map(|&i| new[i]).collect();

    let mut s = Search { reqs, ctx, slots, occupied, choice: Vec::new(), best: None };
    let base = s.used();
    s.go(0, base);
    let (used, choice) = s.best.ok_or(PlaceError::Infeasible { max_workers: n_slots })?;
    let x: BTreeMap<_, _> = s.reqs.iter().zip(choice).map(|(c, w)| (c.id, w)).collect();
    Ok(Assignment { x, workers_used: used })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::placement::tests::unit_models;
    use crate::placement::{Knobs, SloSpec, Stage};

    fn ctx(m: &crate::PerfModelSet) -> PlacementCtx<'_> {
        PlacementCtx::new(m, SloSpec { t_pre: 10.0, t_dec: 0.04 }, Knobs { gamma: 1.0, theta: 1.0 }, 0.0, Stage::Colocated)
    }

    #[test]
    fn pairing_needs_two_mixed_workers() {
        let m = unit_models();
        let c = ctx(&m);
        let reqs: Vec<_> =
            [(4, 1), (1, 4), (4, 1), (1, 4)].iter().enumerate().map(|(i, &(a, b))| Candidate::new(i as u64, 0.0, a, b)).collect();
        let a = solve_exact(&reqs, &Cluster::new(9.0, None), &c, 4).unwrap();
        assert_eq!(a.workers_used, 2);
        assert_ne!(a.x[&0], a.x[&2]);
        assert_ne!(a.x[&1], a.x[&3]);
    }

    #[test]
    fn one_request_one_worker() {
        let m = unit_models();
        let a = solve_exact(&[Candidate::new(0, 0.0, 1, 1)], &Cluster::new(9.0, None), &ctx(&m), 3).unwrap();
        assert_eq!(a.workers_used, 1);
    }

    #[test]
    fn kv_saturating_requests_each_need_a_worker() {
        let m = unit_models();
        let reqs: Vec<_> = (0..5).map(|i| Candidate::new(i, 0.0, 4, 1)).collect();
        let a = solve_exact(&reqs, &Cluster::new(5.0, None), &ctx(&m), 5).unwrap();
        assert_eq!(a.workers_used, 5);
        assert_eq!(
            solve_exact(&reqs, &Cluster::new(5.0, None), &ctx(&m), 4),
            Err(PlaceError::Infeasible { max_workers: 4 })
        );
    }

    #[test]
    fn guards_instance_size() {
        let m = unit_models();
        let reqs: Vec<_> = (0..13).map(|i| Candidate::new(i, 0.0, 1, 1)).collect();
        assert!(matches!(solve_exact(&reqs, &Cluster::new(9.0, None), &ctx(&m), 13), Err(PlaceError::TooLarge { .. })));
    }
}
