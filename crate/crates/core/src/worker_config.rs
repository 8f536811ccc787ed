//! Tensor-parallel worker sizing.
//!
//! A worker is a tensor-parallel group of `n` GPUs holding one model replica.
//! Its decode throughput per GPU is bounded either by KV capacity (the batch
//! that fills the cache) or by the ATGT target (the batch whose iteration
//! time reaches the target). The best size maximizes the smaller of the two.
//!
//! The decode model is profiled at one reference size `n_ref`; at other sizes
//! its latencies are rescaled by the ratio of tensor-parallel iteration times
//! (`k4 / n + c4 + k_comm * (n - 1) / n`). This transfer rule is an
//! assumption of this crate, not a measured property.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perf_models::{DecodeModel, KvModel};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("model does not fit on {n_gpus} GPU(s): KV capacity {capacity} <= 0")]
    ModelDoesNotFit { n_gpus: u32, capacity: f64 },
    #[error("no worker size in 1..={max} GPUs can hold the model")]
    NoFeasibleConfiguration { max: u32 },
    #[error("invalid plan input: {0}")]
    Invalid(String),
}

/// Per-iteration compute and All-reduce cost under tensor parallelism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeModel {
    pub k4: f64,
    pub c4: f64,
    pub k_comm: f64,
}

impl ComputeModel {
    /// `k4 / n + c4 + k_comm * (n - 1) / n`.
    pub fn tp_iter_time(&self, n_gpus: u32) -> f64 {
        assert!(n_gpus >= 1, "a worker has at least one GPU");
        let n = n_gpus as f64;
        self.k4 / n + self.c4 + self.k_comm * (n - 1.0) / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpuSpec {
    /// Memory per GPU, in kv-units.
    pub m_gpu: f64,
    pub max_gpus_per_node: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerPlanInput {
    /// Model weights footprint, in kv-units.
    pub m_model: f64,
    /// Mean per-request KV demand from history, in kv-units.
    pub m_r: f64,
    /// ATGT target, seconds.
    pub t_decode: f64,
    pub kv: KvModel,
    pub decode: DecodeModel,
    pub compute: ComputeModel,
    pub gpu: GpuSpec,
    /// GPU count the decode model was profiled with.
    #[serde(default = "default_n_ref")]
    pub n_ref: u32,
}

fn default_n_ref() -> u32 {
    1
}

impl WorkerPlanInput {
    pub fn validate(&self) -> Result<(), PlanError> {
        let g = &self.gpu;
        if !(g.m_gpu > 0.0) || !(1..=8).contains(&g.max_gpus_per_node) {
            return Err(PlanError::Invalid(format!(
                "need m_gpu > 0 and 1 <= max_gpus_per_node <= 8 (m_gpu={}, max={})",
                g.m_gpu, g.max_gpus_per_node
            )));
        }
        if !(self.m_r > 0.0) || !(self.t_decode > 0.0) || self.n_ref == 0 {
            return Err(PlanError::Invalid("need m_r > 0, t_decode > 0 and n_ref >= 1".into()));
        }
        let c = &self.compute;
        if !(c.k4 > 0.0) || c.c4 < 0.0 || c.k_comm < 0.0 {
            return Err(PlanError::Invalid("need k4 > 0, c4 >= 0, k_comm >= 0".into()));
        }
        Ok(())
    }

    /// `n * m_gpu - m_model`; non-positive when the model does not fit.
    pub fn kv_capacity(&self, n_gpus: u32) -> f64 {
        n_gpus as f64 * self.gpu.m_gpu - self.m_model
    }

    /// Latency multiplier applied to the reference decode model at `n_gpus`.
    pub fn tp_scale(&self, n_gpus: u32) -> f64 {
        self.compute.tp_iter_time(n_gpus) / self.compute.tp_iter_time(self.n_ref)
    }

    /// Mean context length implied by `m_r` through the KV model.
    pub fn mean_context(&self) -> f64 {
        self.kv.context_for(self.m_r).max(1.0)
    }

    /// Largest batch whose decode iteration meets `t_decode` at the mean
    /// context, under the `n_gpus` latency scale. Zero if even a lone
    /// request misses the target.
    pub fn slo_batch(&self, n_gpus: u32) -> u32 {
        let d = self.decode.scaled(self.tp_scale(n_gpus));
        let ctx = self.mean_context();
        let per_request = d.k2 * ctx + d.c2;
        let bound = ((self.t_decode - d.c3) / per_request).floor();
        if bound >= 2.0 {
            let mut b = bound.min(u32::MAX as f64) as u32;
            // guard the floor against rounding
            while b > 2 && d.iter_time(b, ctx) > self.t_decode {
                b -= 1;
            }
            if d.iter_time(b, ctx) <= self.t_decode {
                return b;
            }
        }
        if d.c_single <= self.t_decode {
            1
        } else {
            0
        }
    }

    /// Both bounds of the per-GPU throughput at `n_gpus`.
    pub fn throughput_terms(&self, n_gpus: u32) -> Result<ThroughputTerms, PlanError> {
        let capacity = self.kv_capacity(n_gpus);
        if capacity <= 0.0 {
            return Err(PlanError::ModelDoesNotFit { n_gpus, capacity });
        }
        let n = n_gpus as f64;
        let d = self.decode.scaled(self.tp_scale(n_gpus));
        let full_batch = capacity / self.m_r;
        let ctx = self.mean_context();
        let iter_full = if full_batch <= 1.0 {
            d.c_single
        } else {
            (d.k2 * ctx + d.c2) * full_batch + d.c3
        };
        let kv_bound = capacity / (n * self.m_r * iter_full);
        let slo_batch = self.slo_batch(n_gpus);
        let slo_bound = slo_batch as f64 / (n * self.t_decode);
        Ok(ThroughputTerms { n_gpus, kv_bound, slo_bound, slo_batch, full_batch })
    }

    pub fn max_per_gpu_throughput(&self, n_gpus: u32) -> Result<f64, PlanError> {
        self.throughput_terms(n_gpus).map(|t| t.value())
    }

    /// GPU count in `1..=max_gpus_per_node` maximizing per-GPU throughput;
    /// ties go to the smaller worker.
    pub fn optimal_worker_size(&self) -> Result<u32, PlanError> {
        self.validate()?;
        let mut best: Option<(u32, f64)> = None;
        for n in 1..=self.gpu.max_gpus_per_node {
            let Ok(value) = self.max_per_gpu_throughput(n) else { continue };
            if best.is_none_or(|(_, v)| value > v) {
                best = Some((n, value));
            }
        }
        best.map(|(n, _)| n)
            .ok_or(PlanError::NoFeasibleConfiguration { max: self.gpu.max_gpus_per_node })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputTerms {
    pub n_gpus: u32,
    pub kv_bound: f64,
    pub slo_bound: f64,
    pub slo_batch: u32,
    pub full_batch: f64,
}

impl ThroughputTerms {
    pub fn value(&self) -> f64 {
        self.kv_bound.min(self.slo_bound)
    }
}
