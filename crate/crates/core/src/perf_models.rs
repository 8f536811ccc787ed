//! Linear performance models of continuous-batching inference.
//!
//! Three families are modeled, all linear in their inputs:
//!
//! * KV-cache footprint of one request as a function of its context length,
//! * prefill iteration latency as a function of the total prompt tokens in
//!   the batch (independent of how they are split across requests),
//! * decode iteration latency as a function of batch size and average
//!   context length.
//!
//! The decode model is inverted to obtain the largest total context a batch
//! of `b` requests may hold while keeping every iteration under an ATGT
//! target. All coefficients are configuration; [`fit_linear`] recovers them
//! from profiling samples by ordinary least squares.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::DataError;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("need at least {needed} samples to fit {dim} feature(s), got {got}")]
    InsufficientSamples { needed: usize, got: usize, dim: usize },
    #[error("design matrix is singular: features are collinear")]
    SingularDesign,
    #[error("ATGT target {t_dec} s must exceed the decode floor c3 = {c3} s")]
    SloInfeasible { t_dec: f64, c3: f64 },
    #[error("invalid model coefficients: {0}")]
    Invalid(String),
}

/// KV-cache usage of one request: `h * (l_in + l_out) + j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KvModel {
    pub h: f64,
    pub j: f64,
}

impl KvModel {
    pub fn new(h: f64, j: f64) -> Result<Self, ModelError> {
        let m = Self { h, j };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.h > 0.0 && self.h.is_finite()) || !self.j.is_finite() {
            return Err(ModelError::Invalid(format!(
                "kv model needs h > 0 and finite j (h={}, j={})",
                self.h, self.j
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn kv_usage(&self, l_in: u32, l_out_so_far: u32) -> f64 {
        self.usage_at(l_in as f64 + l_out_so_far as f64)
    }

    /// Footprint at an arbitrary context length (tokens).
    #[inline]
    pub fn usage_at(&self, context: f64) -> f64 {
        self.h * context + self.j
    }

    /// Context length whose footprint is `kv`; inverse of [`usage_at`](Self::usage_at).
    pub fn context_for(&self, kv: f64) -> f64 {
        (kv - self.j) / self.h
    }
}

/// Prefill latency: `k1 * sum(l_in) + c1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefillModel {
    pub k1: f64,
    pub c1: f64,
}

impl PrefillModel {
    pub fn new(k1: f64, c1: f64) -> Result<Self, ModelError> {
        let m = Self { k1, c1 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) || !(self.c1 >= 0.0 && self.c1.is_finite()) {
            return Err(ModelError::Invalid(format!(
                "prefill model needs k1 > 0 and c1 >= 0 (k1={}, c1={})",
                self.k1, self.c1
            )));
        }
        Ok(())
    }

    /// Latency of one prefill iteration over `total_input` prompt tokens.
    ///
    /// Panics if `total_input` is zero: an empty prefill batch is never run.
    #[inline]
    pub fn prefill_time(&self, total_input: u64) -> f64 {
        assert!(total_input >= 1, "prefill batch must contain at least one token");
        self.k1 * total_input as f64 + self.c1
    }
}

/// Decode iteration latency: `(k2 * l_ave + c2) * b + c3` for `b > 1`, and the
/// separately measured constant `c_single` for a lone request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeModel {
    pub k2: f64,
    pub c2: f64,
    pub c3: f64,
    pub c_single: f64,
}

impl DecodeModel {
    pub fn new(k2: f64, c2: f64, c3: f64, c_single: f64) -> Result<Self, ModelError> {
        let m = Self { k2, c2, c3, c_single };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(positive(self.k2) && positive(self.c2) && positive(self.c3) && positive(self.c_single))
        {
            return Err(ModelError::Invalid(format!(
                "decode model coefficients must all be positive (k2={}, c2={}, c3={}, c_single={})",
                self.k2, self.c2, self.c3, self.c_single
            )));
        }
        Ok(())
    }

    /// Latency of one decode iteration.
    #[inline]
    pub fn iter_time(&self, batch_size: u32, avg_context: f64) -> f64 {
        assert!(batch_size >= 1, "decode batch must be non-empty");
        if batch_size == 1 {
            self.c_single
        } else {
            (self.k2 * avg_context + self.c2) * batch_size as f64 + self.c3
        }
    }

    /// Same as [`iter_time`](Self::iter_time) but parameterised by the total
    /// context of the batch.
    #[inline]
    pub fn iter_time_total(&self, batch_size: u32, total_context: f64) -> f64 {
        assert!(batch_size >= 1, "decode batch must be non-empty");
        if batch_size == 1 {
            self.c_single
        } else {
            self.k2 * total_context + self.c2 * batch_size as f64 + self.c3
        }
    }

    /// Largest total context (tokens) a batch of `batch_size > 1` requests may
    /// hold while one decode iteration stays within `t_dec`. Clamped at 0.
    pub fn max_total_context(&self, batch_size: u32, t_dec: f64) -> Result<f64, ModelError> {
        assert!(batch_size > 1, "context limit is defined for batches of two or more");
        if t_dec <= self.c3 {
            return Err(ModelError::SloInfeasible { t_dec, c3: self.c3 });
        }
        let limit = (t_dec - self.c3 - self.c2 * batch_size as f64) / self.k2;
        Ok(limit.max(0.0))
    }

    /// Context budget for a batch of any size: for a lone request the budget
    /// is unbounded when `c_single` meets the target and zero otherwise.
    pub fn context_budget(&self, batch_size: u32, t_dec: f64) -> f64 {
        match batch_size {
            0 => f64::INFINITY,
            1 if self.c_single <= t_dec => f64::INFINITY,
            1 => 0.0,
            b => self.max_total_context(b, t_dec).unwrap_or(0.0),
        }
    }

    /// Copy of the model with every latency multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            k2: self.k2 * factor,
            c2: self.c2 * factor,
            c3: self.c3 * factor,
            c_single: self.c_single * factor,
        }
    }
}

/// All fitted models of one serving configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfModelSet {
    pub kv: KvModel,
    pub prefill: PrefillModel,
    pub decode: DecodeModel,
}

impl PerfModelSet {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.kv.validate()?;
        self.prefill.validate()?;
        self.decode.validate()
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let set: Self = serde_json::from_str(text).map_err(|e| DataError::Json(e.to_string()))?;
        set.validate().map_err(|e| DataError::Invalid(e.to_string()))?;
        Ok(set)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model set serializes")
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.at(path))
    }
}

/// Result of an ordinary least-squares fit `y = coefficients . x + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub residual_std: f64,
    pub n_samples: usize,
}

impl LinearFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.coefficients.len());
        self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() + self.intercept
    }

    /// Symmetric prediction interval at `level` (e.g. 0.95), assuming
    /// normally distributed residuals.
    pub fn prediction_interval(&self, x: &[f64], level: f64) -> (f64, f64) {
        assert!(level > 0.0 && level < 1.0, "interval level must be in (0, 1)");
        let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
        let center = self.predict(x);
        let half = z * self.residual_std;
        (center - half, center + half)
    }
}

/// One profiling observation: feature vector and observed value.
pub type Sample = (Vec<f64>, f64);

/// Ordinary least squares with an intercept term.
pub fn fit_linear(samples: &[Sample]) -> Result<LinearFit, ModelError> {
    let dim = samples.first().map_or(0, |s| s.0.len());
    let needed = dim + 1;
    if samples.len() < needed || samples.len() < 2 {
        return Err(ModelError::InsufficientSamples {
            needed: needed.max(2),
            got: samples.len(),
            dim,
        });
    }
    assert!(
        samples.iter().all(|s| s.0.len() == dim),
        "all samples must share one feature dimension"
    );

    let n = samples.len();
    let design = DMatrix::from_fn(n, dim + 1, |r, c| if c < dim { samples[r].0[c] } else { 1.0 });
    let target = DVector::from_iterator(n, samples.iter().map(|s| s.1));

    let svd = design.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_max > 0.0) || s_min <= s_max * 1e-12 {
        return Err(ModelError::SingularDesign);
    }
    let beta = svd
        .solve(&target, s_max * 1e-14)
        .map_err(|_| ModelError::SingularDesign)?;

    let residuals = &target - &design * &beta;
    let mean = residuals.mean();
    let residual_std = if n > 1 {
        (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };

    Ok(LinearFit {
        coefficients: beta.iter().take(dim).copied().collect(),
        intercept: beta[dim],
        residual_std,
        n_samples: n,
    })
}

/// Loads samples from a CSV with header `x1,...,xn,y`.
pub fn load_samples(path: &Path) -> Result<Vec<Sample>, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    read_samples(file).map_err(|e| e.at(path))
}

pub fn read_samples<R: std::io::Read>(reader: R) -> Result<Vec<Sample>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::Csv(e.to_string()))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let dim = cols.len().saturating_sub(1);
    let header_ok = cols.len() >= 2
        && cols.last() == Some(&"y")
        && cols[..dim].iter().enumerate().all(|(i, c)| *c == format!("x{}", i + 1));
    if !header_ok {
        return Err(DataError::Malformed {
            line: 1,
            reason: format!("expected header x1,...,xn,y, got {}", cols.join(",")),
        });
    }

    let mut out = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| DataError::Malformed { line, reason: e.to_string() })?;
        let values: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = values.map_err(|e| DataError::Malformed { line, reason: e.to_string() })?;
        if values.len() != dim + 1 {
            return Err(DataError::Malformed {
                line,
                reason: format!("expected {} columns, got {}", dim + 1, values.len()),
            });
        }
        let y = values[dim];
        out.push((values[..dim].to_vec(), y));
    }
    Ok(out)
}

/// Per-family fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub family: String,
    pub n_samples: usize,
    pub residual_std: f64,
}

/// Fits all three families.
///
/// * `kv` samples: `x1` = context tokens, `y` = kv-units.
/// * `prefill` samples: `x1` = total prompt tokens in the batch, `y` = seconds.
/// * `decode` samples: `x1` = total context of the batch, `x2` = batch size,
///   `y` = seconds. Rows with batch size 1 estimate `c_single` (their mean);
///   the remaining rows fit `k2`, `c2`, `c3`.
pub fn fit_model_set(
    kv: &[Sample],
    prefill: &[Sample],
    decode: &[Sample],
) -> Result<(PerfModelSet, Vec<FamilyReport>), ModelError> {
    let kv_fit = fit_linear(kv)?;
    let prefill_fit = fit_linear(prefill)?;

    let (single, batched): (Vec<&Sample>, Vec<&Sample>) =
        decode.iter().partition(|s| s.0.len() == 2 && s.0[1] == 1.0);
    let batched: Vec<Sample> = batched.into_iter().cloned().collect();
    let decode_fit = fit_linear(&batched)?;
    if decode_fit.coefficients.len() != 2 {
        return Err(ModelError::Invalid("decode samples need columns x1 (total context), x2 (batch size)".into()));
    }
    let (k2, c2, c3) = (decode_fit.coefficients[0], decode_fit.coefficients[1], decode_fit.intercept);
    let c_single = if single.is_empty() {
        // no lone-request rows: fall back to the b = 1 evaluation at zero context
        c2 + c3
    } else {
        single.iter().map(|s| s.1).sum::<f64>() / single.len() as f64
    };

    let set = PerfModelSet {
        kv: KvModel { h: kv_fit.coefficients[0], j: kv_fit.intercept },
        prefill: PrefillModel { k1: prefill_fit.coefficients[0], c1: prefill_fit.intercept },
        decode: DecodeModel { k2, c2, c3, c_single },
    };
    let reports = vec![
        FamilyReport { family: "kv".into(), n_samples: kv_fit.n_samples, residual_std: kv_fit.residual_std },
        FamilyReport {
            family: "prefill".into(),
            n_samples: prefill_fit.n_samples,
            residual_std: prefill_fit.residual_std,
        },
        FamilyReport {
            family: "decode".into(),
            n_samples: decode_fit.n_samples,
            residual_std: decode_fit.residual_std,
        },
    ];
    Ok((set, reports))
}
