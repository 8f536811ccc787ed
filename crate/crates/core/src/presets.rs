//! Named model/SLO presets and the default length distribution.
//!
//! The coefficients are synthetic: shaped after public descriptions of
//! 70B and 13B chat models on A100s, not measured. SLO targets match the
//! commonly quoted per-model values (70B: 1.6 s TTFT, 75 ms ATGT; 13B:
//! 600 ms, 30 ms).

use serde::{Deserialize, Serialize};

use crate::perf_models::PerfModelSet;
use crate::placement::SloSpec;
use crate::worker_config::WorkerPlanInput;
use crate::workload::LengthDistribution;
use crate::DataError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServingPreset {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub models: PerfModelSet,
    pub slo: SloSpec,
    /// KV capacity of one worker.
    pub kv_capacity: f64,
    pub gpus_per_worker: u32,
    /// Inputs for worker sizing, when known.
    #[serde(default)]
    pub plan: Option<WorkerPlanInput>,
}

const SOURCES: &[(&str, &str)] = &[
    ("llama2-70b-a100", include_str!("../presets/llama2-70b-a100.json")),
    ("llama2-13b-a100", include_str!("../presets/llama2-13b-a100.json")),
];

const SHAREGPT_LIKE: &str = include_str!("../presets/sharegpt-like.json");

pub fn names() -> Vec<&'static str> {
    SOURCES.iter().map(|s| s.0).collect()
}

/// Looks up a serving preset by name.
pub fn serving(name: &str) -> Result<ServingPreset, DataError> {
    let (_, text) = SOURCES
        .iter()
        .find(|s| s.0 == name)
        .ok_or_else(|| DataError::Invalid(format!("unknown preset '{name}' (known: {})", names().join(", "))))?;
    serde_json::from_str(text).map_err(|e| DataError::Json(e.to_string()))
}

/// Synthetic chat-style length distribution shipped as a JSON CDF table.
pub fn sharegpt_like() -> LengthDistribution {
    serde_json::from_str(SHAREGPT_LIKE).expect("shipped distribution parses")
}

pub fn distribution(name: &str) -> Result<LengthDistribution, DataError> {
    match name {
        "sharegpt-like" => Ok(sharegpt_like()),
        other => Err(DataError::Invalid(format!("unknown distribution '{other}' (known: sharegpt-like)"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for name in names() {
            let p = serving(name).unwrap();
            p.models.validate().unwrap();
            p.slo.validate(&p.models).unwrap();
            assert!(p.kv_capacity > 0.0);
        }
        let p = serving("llama2-70b-a100").unwrap();
        assert_eq!((p.slo.t_pre, p.slo.t_dec), (1.6, 0.075));
        assert!(serving("gpt-5").is_err());
    }

    #[test]
    fn shipped_distribution_matches_builtin() {
        let d = sharegpt_like();
        d.validate().unwrap();
        assert_eq!(d, LengthDistribution::sharegpt_like());
    }

    #[test]
    fn preset_worker_sizes() {
        let size = |n| serving(n).unwrap().plan.unwrap().optimal_worker_size().unwrap();
        assert_eq!(size("llama2-70b-a100"), 2);
        assert_eq!(size("llama2-13b-a100"), 1);
    }
}
