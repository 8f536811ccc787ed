//! Worker demand from arrival rate, the sampling-error gate on rate
//! estimates, and partitioning of the cluster into scheduler groups.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perf_models::fit_linear;

#[derive(Debug, Error, PartialEq)]
pub enum ScalingError {
    #[error("need at least 3 (rate, workers) points, got {got}")]
    InsufficientHistory { got: usize },
    #[error("rate {rate} is at or below the validity floor {floor}")]
    BelowValidityFloor { rate: f64, floor: f64 },
    #[error("no group count satisfies both bounds: {0}")]
    InfeasibleBounds(String),
    #[error("invalid scaling input: {0}")]
    Invalid(String),
}

/// `N_w = ceil(k5 * rate + c5)`, valid for `rate > r_floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    pub k5: f64,
    pub c5: f64,
    pub r_floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandFit {
    pub model: DemandModel,
    /// Index of the first history point inside the linear regime.
    pub knee: usize,
    /// Coefficient of determination of the least-squares line above the knee.
    pub r_squared: f64,
    /// Set when workers do not grow with rate.
    pub degenerate: bool,
}

fn ceil_tol(x: f64) -> f64 {
    (x - 1e-9).ceil()
}

impl DemandModel {
    pub fn predict_workers(&self, rate: f64) -> Result<u32, ScalingError> {
        if rate <= self.r_floor {
            return Err(ScalingError::BelowValidityFloor { rate, floor: self.r_floor });
        }
        Ok(self.raw_workers(rate))
    }

    /// Formula value without the validity check, at least one worker.
    pub fn raw_workers(&self, rate: f64) -> u32 {
        ceil_tol(self.k5 * rate + self.c5).max(1.0) as u32
    }
}

fn line_fit(points: &[(f64, f64)]) -> Result<(f64, f64), ScalingError> {
    let samples: Vec<_> = points.iter().map(|&(r, n)| (vec![r], n)).collect();
    match fit_linear(&samples) {
        Ok(f) => Ok((f.coefficients[0], f.intercept)),
        // all rates equal
        Err(_) => Err(ScalingError::Invalid("history rates must not all be equal".into())),
    }
}

fn r_squared(points: &[(f64, f64)], k: f64, c: f64) -> f64 {
    let mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - (k * p.0 + c)).powi(2)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Fits the demand line to `(rate, workers_needed)` history.
///
/// The linear regime starts at the first point from which every later point
/// lies within 10% of the least-squares line through them (at least three
/// points are kept). `r_floor` is the largest rate left out, or 0. The slope
/// is the least-squares slope; the intercept is the value in
/// `[c_ols - 1, c_ols]` under which the ceiling reproduces the most observed
/// counts (ties to the larger value), since counts are ceilings of the line.
pub fn fit_demand(history: &[(f64, u32)]) -> Result<DemandFit, ScalingError> {
    if history.len() < 3 {
        return Err(ScalingError::InsufficientHistory { got: history.len() });
    }
    let mut pts: Vec<(f64, f64)> = history.iter().map(|&(r, n)| (r, n as f64)).collect();
    if pts.iter().any(|p| !(p.0.is_finite() && p.0 >= 0.0)) {
        return Err(ScalingError::Invalid("rates must be finite and non-negative".into()));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut knee = pts.len() - 3;
    for start in 0..=pts.len() - 3 {
        let tail = &pts[start..];
        let Ok((k, c)) = line_fit(tail) else { continue };
        if tail.iter().all(|&(r, n)| (n - (k * r + c)).abs() < 0.1 * n.abs().max(1.0)) {
            knee = start;
            break;
        }
    }
    let tail = &pts[knee..];
    let (k5, c_ols) = line_fit(tail)?;
    let hits = |c: f64| tail.iter().filter(|&&(r, n)| ceil_tol(k5 * r + c) == n).count();
    let mut c5 = c_ols;
    let mut best = hits(c_ols);
    for &(r, n) in tail {
        let c = n - k5 * r;
        if c < c_ols - 1.0 - 1e-12 || c > c_ols + 1e-12 {
            continue;
        }
        let h = hits(c);
        if h > best || (h == best && c > c5) {
            best = h;
            c5 = c;
        }
    }
    let r_floor = if knee == 0 { 0.0 } else { pts[knee - 1].0 };
    let scale = tail.iter().map(|p| p.1.abs()).fold(1.0, f64::max);
    let span = tail.iter().map(|p| p.0).fold(0.0, f64::max);
    let degenerate = !(k5 * span > 1e-6 * scale);
    Ok(DemandFit {
        model: DemandModel { k5, c5, r_floor },
        knee,
        r_squared: r_squared(tail, k5, c_ols),
        degenerate,
    })
}

/// Standard error of the mean.
pub fn sem(sigma: f64, n: u64) -> f64 {
    assert!(n >= 1 && sigma >= 0.0, "sem needs n >= 1 and sigma >= 0");
    sigma / (n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPlan {
    pub n_groups: u32,
    pub group_rates: Vec<f64>,
    pub workers_per_group: Vec<u32>,
    pub e: f64,
    pub t_s: f64,
}

impl GroupPlan {
    pub fn total_workers(&self) -> u32 {
        self.workers_per_group.iter().sum()
    }
}

/// Smallest workers-per-group count for which fragmentation overhead stays
/// within the fraction `e`.
pub fn min_workers_per_group(e: f64) -> u32 {
    ceil_tol(1.0 / (2.0 * e)) as u32
}

/// Splits `rate` equally over the fewest groups such that each group's rate
/// is within what one scheduler handles under `t_s` and, when there is more
/// than one group, each group still needs at least `1/(2e)` workers. Every
/// group is provisioned with at least `1/(2e)` workers.
pub fn plan_groups(
    rate: f64,
    e: f64,
    t_s: f64,
    sched_rate_limit: impl Fn(f64) -> f64,
    demand: &DemandModel,
) -> Result<GroupPlan, ScalingError> {
    if !(e > 0.0 && e <= 0.5) {
        return Err(ScalingError::Invalid(format!("e must be in (0, 0.5], got {e}")));
    }
    if !(rate > 0.0) || !(t_s > 0.0) {
        return Err(ScalingError::Invalid("rate and t_s must be positive".into()));
    }
    let limit = sched_rate_limit(t_s);
    if !(limit > 0.0) {
        return Err(ScalingError::InfeasibleBounds(format!("scheduler rate limit r({t_s}) = {limit}")));
    }
    let floor = min_workers_per_group(e);
    let needed = (rate / limit - 1e-12).ceil().max(1.0) as u32;
    let n = needed;
    if n >= 2 && demand.raw_workers(rate / n as f64) < floor {
        return Err(ScalingError::InfeasibleBounds(format!(
            "{n} groups are needed to stay under {limit} req/s each, but then a group needs fewer than {floor} workers"
        )));
    }
    let share = rate / n as f64;
    let mut group_rates = vec![share; n as usize];
    let others: f64 = group_rates[..n as usize - 1].iter().sum();
    group_rates[n as usize - 1] = rate - others;
    let workers_per_group = group_rates.iter().map(|&r| demand.raw_workers(r).max(floor)).collect();
    Ok(GroupPlan { n_groups: n, group_rates, workers_per_group, e, t_s })
}

pub fn route_round_robin(seq: u64, n_groups: u32) -> u32 {
    assert!(n_groups >= 1, "at least one group");
    (seq % n_groups as u64) as u32
}

/// Autoscaler settings. Rates come from a sliding window of arrivals; a
/// decision is made only when the window's mean input length is known to
/// within `sem_tolerance` (relative standard error).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoscaleSpec {
    pub demand: DemandModel,
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default = "default_interval")]
    pub interval: f64,
    #[serde(default = "default_sem_tolerance")]
    pub sem_tolerance: f64,
    #[serde(default = "default_min_workers")]
    pub min_workers: u32,
    pub max_workers: u32,
    #[serde(default = "default_e")]
    pub e: f64,
    /// Requests per second one scheduler places within its latency budget.
    #[serde(default = "default_sched_rate")]
    pub sched_rate_limit: f64,
}

fn default_window() -> f64 {
    30.0
}
fn default_interval() -> f64 {
    5.0
}
fn default_sem_tolerance() -> f64 {
    0.05
}
fn default_min_workers() -> u32 {
    1
}
fn default_e() -> f64 {
    0.1
}
fn default_sched_rate() -> f64 {
    1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleDecision {
    pub time: f64,
    pub rate_estimate: f64,
    pub n_workers: u32,
    pub n_groups: u32,
}

#[derive(Debug, Clone)]
pub struct Autoscaler {
    spec: AutoscaleSpec,
    arrivals: VecDeque<(f64, u32)>,
}

impl Autoscaler {
    pub fn new(spec: AutoscaleSpec) -> Self {
        Self { spec, arrivals: VecDeque::new() }
    }

    pub fn spec(&self) -> &AutoscaleSpec {
        &self.spec
    }

    pub fn observe(&mut self, time: f64, l_in: u32) {
        self.arrivals.push_back((time, l_in));
    }

    /// Target pool size at `now`, or `None` while the estimate is not
    /// trustworthy or below the demand model's validity floor.
    pub fn decide(&mut self, now: f64) -> Option<ScaleDecision> {
        let start = now - self.spec.window;
        while self.arrivals.front().is_some_and(|a| a.0 < start) {
            self.arrivals.pop_front();
        }
        let n = self.arrivals.len();
        let span = self.spec.window.min(now);
        if n < 2 || span <= 0.0 {
            return None;
        }
        let mean = self.arrivals.iter().map(|a| a.1 as f64).sum::<f64>() / n as f64;
        let var = self.arrivals.iter().map(|a| (a.1 as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        if sem(var.sqrt(), n as u64) > self.spec.sem_tolerance * mean {
            return None;
        }
        let rate = n as f64 / span;
        let wanted = self.spec.demand.predict_workers(rate).ok()?;
        let n_workers = wanted.clamp(self.spec.min_workers.max(1), self.spec.max_workers.max(1));
        let limit = self.spec.sched_rate_limit;
        let n_groups = plan_groups(rate, self.spec.e, 1.0, |_| limit, &self.spec.demand).map_or(1, |p| p.n_groups);
        Some(ScaleDecision { time: now, rate_estimate: rate, n_workers, n_groups })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn recovers_ceiling_line() {
        let hist: Vec<_> = (10..=50).step_by(5).map(|r| (r as f64, (0.8 * r as f64 + 2.0).ceil() as u32)).collect();
        let fit = fit_demand(&hist).unwrap();
        assert_relative_eq!(fit.model.k5, 0.8, max_relative = 0.05);
        assert_relative_eq!(fit.model.c5, 2.0, max_relative = 0.05);
        assert!(!fit.degenerate);
        assert!(fit.r_squared > 0.99);
    }

    #[test]
    fn constant_demand_is_degenerate() {
        let hist: Vec<_> = (1..=6).map(|r| (r as f64 * 5.0, 4)).collect();
        let fit = fit_demand(&hist).unwrap();
        assert!(fit.degenerate);
        assert!(fit.model.k5.abs() < 1e-9);
    }

    #[test]
    fn two_points_are_not_enough() {
        assert_eq!(fit_demand(&[(1.0, 1), (2.0, 2)]), Err(ScalingError::InsufficientHistory { got: 2 }));
    }

    #[test]
    fn knee_excludes_low_rate_plateau() {
        // a floor of 6 workers below 10 req/s, then linear
        let mut hist: Vec<_> = [1.0, 3.0, 5.0].iter().map(|&r| (r, 6)).collect();
        hist.extend((10..=40).step_by(10).map(|r| (r as f64, r / 2)));
        let fit = fit_demand(&hist).unwrap();
        assert_eq!(fit.model.r_floor, 5.0);
        assert_relative_eq!(fit.model.k5, 0.5, max_relative = 1e-9);
        assert!(fit.model.predict_workers(5.0).is_err());
    }

    #[test]
    fn predict_examples() {
        let m = DemandModel { k5: 0.8, c5: 2.0, r_floor: 0.0 };
        assert_eq!(m.predict_workers(10.0), Ok(10));
        let m = DemandModel { k5: 0.5, c5: 1.0, r_floor: 4.0 };
        assert_eq!(m.predict_workers(6.0), Ok(4));
        assert!(matches!(m.predict_workers(4.0), Err(ScalingError::BelowValidityFloor { .. })));
    }

    #[test]
    fn sem_examples() {
        assert_eq!(sem(100.0, 100), 10.0);
        assert_eq!(sem(0.0, 7), 0.0);
        assert_eq!(sem(50.0, 4), 25.0);
    }

    #[test]
    fn plan_example_four_groups() {
        let demand = DemandModel { k5: 0.5, c5: 0.0, r_floor: 0.0 };
        let p = plan_groups(40.0, 0.1, 0.05, |_| 12.0, &demand).unwrap();
        assert_eq!(p.n_groups, 4);
        assert_eq!(p.group_rates, vec![10.0; 4]);
        assert_eq!(p.workers_per_group, vec![5; 4]);
        assert_eq!(p.group_rates.iter().sum::<f64>(), 40.0);
    }

    #[test]
    fn low_rate_is_centralized() {
        let demand = DemandModel { k5: 0.5, c5: 0.0, r_floor: 0.0 };
        let p = plan_groups(2.0, 0.1, 0.05, |_| 12.0, &demand).unwrap();
        assert_eq!(p.n_groups, 1);
        assert_eq!(p.workers_per_group, vec![5]);
    }

    #[test]
    fn tight_latency_with_loose_tolerance_is_infeasible() {
        let demand = DemandModel { k5: 0.5, c5: 0.0, r_floor: 0.0 };
        assert!(matches!(plan_groups(40.0, 0.1, 0.05, |_| 4.0, &demand), Err(ScalingError::InfeasibleBounds(_))));
    }

    #[test]
    fn round_robin_cycles() {
        assert_eq!(route_round_robin(0, 3), 0);
        assert_eq!(route_round_robin(7, 3), 1);
        let seen: Vec<_> = (0..6).map(|s| route_round_robin(s, 3)).collect();
        assert_eq!(seen, vec![0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn autoscaler_waits_for_stable_estimate() {
        let spec = AutoscaleSpec {
            demand: DemandModel { k5: 0.5, c5: 1.0, r_floor: 0.0 },
            window: 10.0,
            interval: 1.0,
            sem_tolerance: 0.05,
            min_workers: 1,
            max_workers: 100,
            e: 0.1,
            sched_rate_limit: 1000.0,
        };
        let mut a = Autoscaler::new(spec);
        a.observe(0.1, 100);
        a.observe(0.2, 900);
        assert_eq!(a.decide(1.0), None);
        for i in 0..100 {
            a.observe(1.0 + i as f64 * 0.05, 500);
        }
        let d = a.decide(6.0).unwrap();
        assert_eq!(d.n_workers, 10);
    }
}
