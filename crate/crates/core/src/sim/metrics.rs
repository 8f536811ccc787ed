use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Summary of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Metrics {
    pub n_requests: usize,
    pub n_finished: usize,
    pub n_rejected: usize,
    /// Fraction of requests meeting both TTFT and ATGT targets; rejected
    /// requests count as misses. 1.0 for an empty workload.
    pub slo_attainment: f64,
    pub ttft_attainment: f64,
    pub atgt_attainment: f64,
    pub p99_ttft: f64,
    pub p99_atgt: f64,
    pub mean_ttft: f64,
    pub mean_atgt: f64,
    /// Most workers simultaneously holding requests (both pools in split mode).
    pub workers_used_max: usize,
    pub workers_opened: usize,
    pub gpu_seconds: f64,
    pub kv_peak_per_worker: Vec<f64>,
    pub kv_peak_max: f64,
    /// Iterations whose KV demand exceeded capacity.
    pub kv_overflow_events: u64,
    pub evictions: u64,
    pub violations: BTreeMap<String, u64>,
    pub rebalance_moves: u64,
    /// Largest change of the summed error distance within one heartbeat's
    /// rebalance; never positive.
    pub rebalance_max_delta: f64,
    pub makespan: f64,
}

/// One row of the per-request CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRow {
    pub id: u64,
    pub arrival: f64,
    pub ttft: Option<f64>,
    pub atgt: Option<f64>,
    pub slo_ok: bool,
    pub worker: Option<usize>,
}

/// Nearest-rank percentile of `values` (`p` in percent); 0 when empty.
pub fn nearest_rank(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 99.0), 99.0);
        assert_eq!(nearest_rank(&v, 100.0), 100.0);
        assert_eq!(nearest_rank(&[3.0, 1.0, 2.0], 50.0), 2.0);
        assert_eq!(nearest_rank(&[], 99.0), 0.0);
    }
}
