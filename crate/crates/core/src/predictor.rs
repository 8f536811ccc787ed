//! Output-length prediction from historical (input, output) pairs.
//!
//! Requests are bucketed by prompt length; the prediction for a bucket is the
//! mean output length of its history, which keeps the predictor unbiased.
//! Once a request outlives its prediction, [`PredictionTable::repredict`]
//! returns the mean of the historical outputs that exceed what has already
//! been generated.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::DataError;

pub const DEFAULT_BUCKET_EDGES: [u32; 6] = [128, 256, 512, 1024, 2048, 4096];
pub const DEFAULT_TAIL_MARGIN: u32 = 64;

#[derive(Debug, Error, PartialEq)]
pub enum PredictError {
    #[error("bucket {index} has no historical samples")]
    EmptyBucket { index: usize },
    #[error("input length {l_in} is outside the table range [1, {max}]")]
    OutOfRange { l_in: u32, max: u32 },
    #[error("bucket edges must be strictly ascending and start above 1")]
    BadEdges,
    #[error("lengths must be >= 1")]
    InvalidLength,
}

/// Conditional tail statistic: mean of the bucket's outputs strictly greater
/// than `above`, or `None` when `above` is the bucket maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub above: u32,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTable {
    /// Upper edges; bucket `i` covers `[edges[i-1], edges[i])`, the first
    /// starting at 1 and the last closed at its edge.
    pub bucket_edges: Vec<u32>,
    pub mean_out: Vec<u32>,
    /// Per bucket, one point per distinct historical output value.
    pub cond_tail_mean: Vec<Vec<TailPoint>>,
    pub sample_counts: Vec<usize>,
    #[serde(default = "default_margin")]
    pub tail_margin: u32,
}

fn default_margin() -> u32 {
    DEFAULT_TAIL_MARGIN
}

/// Result of a re-prediction. `fallback` is set when no historical sample
/// exceeded the generated length and a fixed margin was used instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reprediction {
    pub tokens: u32,
    pub fallback: bool,
}

fn round_half_up(x: f64) -> u32 {
    (x + 0.5).floor() as u32
}

impl PredictionTable {
    pub fn build(history: &[(u32, u32)], bucket_edges: &[u32]) -> Result<Self, PredictError> {
        if bucket_edges.is_empty()
            || bucket_edges[0] <= 1
            || bucket_edges.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(PredictError::BadEdges);
        }
        let max = *bucket_edges.last().unwrap();
        let mut per_bucket: Vec<Vec<u32>> = vec![Vec::new(); bucket_edges.len()];
        for &(l_in, l_real) in history {
            if l_in == 0 || l_real == 0 {
                return Err(PredictError::InvalidLength);
            }
            let b = bucket_of(bucket_edges, l_in).ok_or(PredictError::OutOfRange { l_in, max })?;
            per_bucket[b].push(l_real);
        }

        let mut mean_out = Vec::with_capacity(per_bucket.len());
        let mut tails = Vec::with_capacity(per_bucket.len());
        let mut counts = Vec::with_capacity(per_bucket.len());
        for (index, outs) in per_bucket.iter_mut().enumerate() {
            if outs.is_empty() {
                return Err(PredictError::EmptyBucket { index });
            }
            outs.sort_unstable();
            let total: f64 = outs.iter().map(|&v| v as f64).sum();
            mean_out.push(round_half_up(total / outs.len() as f64).max(1));
            counts.push(outs.len());

            // walk distinct values from the top, accumulating the tail
            let mut points = Vec::new();
            let mut tail_sum = 0.0;
            let mut tail_n = 0usize;
            let mut i = outs.len();
            while i > 0 {
                let v = outs[i - 1];
                let mut k = i;
                while k > 0 && outs[k - 1] == v {
                    k -= 1;
                }
                let mean = (tail_n > 0).then(|| tail_sum / tail_n as f64);
                points.push(TailPoint { above: v, mean });
                tail_sum += v as f64 * (i - k) as f64;
                tail_n += i - k;
                i = k;
            }
            points.reverse();
            tails.push(points);
        }

        Ok(Self {
            bucket_edges: bucket_edges.to_vec(),
            mean_out,
            cond_tail_mean: tails,
            sample_counts: counts,
            tail_margin: DEFAULT_TAIL_MARGIN,
        })
    }

    /// Like [`build`](Self::build), but drops edges whose bucket would be
    /// empty, merging it into the next one. Trailing empty buckets vanish.
    pub fn build_merging_empty(history: &[(u32, u32)], bucket_edges: &[u32]) -> Result<Self, PredictError> {
        let mut counts = vec![0usize; bucket_edges.len()];
        for &(l_in, _) in history {
            if let Some(b) = bucket_of(bucket_edges, l_in) {
                counts[b] += 1;
            }
        }
        let edges: Vec<u32> = bucket_edges.iter().zip(&counts).filter(|(_, &n)| n > 0).map(|(&e, _)| e).collect();
        if edges.is_empty() {
            return Err(PredictError::EmptyBucket { index: 0 });
        }
        // the new last bucket must still reach the largest input seen
        let max_in = history.iter().map(|h| h.0).max().unwrap_or(1);
        let mut edges = edges;
        let last = edges.len() - 1;
        edges[last] = edges[last].max(max_in);
        Self::build(history, &edges)
    }

    pub fn with_tail_margin(mut self, margin: u32) -> Self {
        self.tail_margin = margin;
        self
    }

    pub fn max_input(&self) -> u32 {
        *self.bucket_edges.last().expect("table has buckets")
    }

    pub fn bucket(&self, l_in: u32) -> Result<usize, PredictError> {
        bucket_of(&self.bucket_edges, l_in)
            .ok_or(PredictError::OutOfRange { l_in, max: self.max_input() })
    }

    pub fn predict(&self, l_in: u32) -> Result<u32, PredictError> {
        Ok(self.mean_out[self.bucket(l_in)?])
    }

    /// Mean historical output length among samples longer than
    /// `generated_so_far`, for prompts in `l_in`'s bucket.
    pub fn repredict(&self, l_in: u32, generated_so_far: u32) -> Result<Reprediction, PredictError> {
        let b = self.bucket(l_in)?;
        let points = &self.cond_tail_mean[b];
        let idx = points.partition_point(|p| p.above <= generated_so_far);
        if idx == 0 {
            // below every sample: the tail is the whole bucket
            return Ok(Reprediction { tokens: self.mean_out[b].max(generated_so_far + 1), fallback: false });
        }
        Ok(match points[idx - 1].mean {
            Some(mean) => Reprediction { tokens: round_half_up(mean).max(generated_so_far + 1), fallback: false },
            None => self.fallback(generated_so_far),
        })
    }

    fn fallback(&self, g: u32) -> Reprediction {
        Reprediction { tokens: g + self.tail_margin.max(1), fallback: true }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        serde_json::from_str(text).map_err(|e| DataError::Json(e.to_string()))
    }
}

/// Index of the left-closed bucket holding `l_in`; the last bucket also
/// holds its upper edge. `None` outside `[1, last edge]`.
pub fn bucket_of(edges: &[u32], l_in: u32) -> Option<usize> {
    if l_in == 0 {
        return None;
    }
    let last = *edges.last()?;
    if l_in > last {
        return None;
    }
    let idx = edges.partition_point(|&e| e <= l_in);
    Some(idx.min(edges.len() - 1))
}

/// Reads a history CSV with header `l_in,l_real`.
pub fn load_history(path: &Path) -> Result<Vec<(u32, u32)>, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    read_history(file).map_err(|e| e.at(path))
}

pub fn read_history<R: std::io::Read>(reader: R) -> Result<Vec<(u32, u32)>, DataError> {
    #[derive(Deserialize)]
    struct Row {
        l_in: u32,
        l_real: u32,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::Csv(e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["l_in", "l_real"] {
        return Err(DataError::Malformed { line: 1, reason: "expected header l_in,l_real".into() });
    }
    rdr.deserialize::<Row>()
        .enumerate()
        .map(|(i, r)| {
            r.map(|row| (row.l_in, row.l_real))
                .map_err(|e| DataError::Malformed { line: i + 2, reason: e.to_string() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_point() -> PredictionTable {
        PredictionTable::build(&[(100, 40), (100, 60)], &[128]).unwrap()
    }

    #[test]
    fn constant_history() {
        let history = vec![(100, 50); 20];
        let t = PredictionTable::build(&history, &[128]).unwrap();
        assert_eq!(t.predict(100).unwrap(), 50);
        assert_eq!(t.predict(1).unwrap(), 50);
    }

    #[test]
    fn two_point_history() {
        let t = two_point();
        assert_eq!(t.predict(100).unwrap(), 50);
        assert_eq!(t.repredict(100, 45).unwrap(), Reprediction { tokens: 60, fallback: false });
        // below every sample: the tail is the whole bucket
        assert_eq!(t.repredict(100, 10).unwrap().tokens, 50);
        // above every sample
        assert_eq!(t.repredict(100, 70).unwrap(), Reprediction { tokens: 70 + 64, fallback: true });
        assert_eq!(t.repredict(100, 60).unwrap(), Reprediction { tokens: 60 + 64, fallback: true });
    }

    #[test]
    fn empty_bucket_is_reported_with_index() {
        let err = PredictionTable::build(&[(100, 40)], &[128, 256]).unwrap_err();
        assert_eq!(err, PredictError::EmptyBucket { index: 1 });
    }

    #[test]
    fn out_of_range_inputs() {
        let t = two_point();
        assert_eq!(t.predict(129), Err(PredictError::OutOfRange { l_in: 129, max: 128 }));
        assert!(t.predict(0).is_err());
    }

    #[test]
    fn buckets_are_left_closed() {
        let t = PredictionTable::build(&[(10, 5), (128, 500), (256, 900)], &[128, 256]).unwrap();
        assert_eq!(t.bucket(127).unwrap(), 0);
        assert_eq!(t.bucket(128).unwrap(), 1);
        // the last bucket is closed at its edge
        assert_eq!(t.bucket(256).unwrap(), 1);
        assert_eq!(t.predict(128).unwrap(), 700);
    }

    #[test]
    fn rounding_is_half_up() {
        let t = PredictionTable::build(&[(5, 1), (5, 2)], &[16]).unwrap();
        assert_eq!(t.predict(5).unwrap(), 2);
    }

    #[test]
    fn unbiased_on_own_history() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let history: Vec<(u32, u32)> = (0..5000)
            .map(|_| {
                let l_in = rng.random_range(1..=4096u32);
                let l_out = rng.random_range(1..=(64 + l_in / 8));
                (l_in, l_out)
            })
            .collect();
        let t = PredictionTable::build(&history, &DEFAULT_BUCKET_EDGES).unwrap();
        let mut err = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let (l_in, l_real) = history[rng.random_range(0..history.len())];
            err += l_real as f64 - t.predict(l_in).unwrap() as f64;
        }
        assert!((err / n as f64).abs() < 2.0, "mean signed error {}", err / n as f64);
    }

    #[test]
    fn history_csv() {
        let rows = read_history("l_in,l_real\n10,20\n30,40\n".as_bytes()).unwrap();
        assert_eq!(rows, vec![(10, 20), (30, 40)]);
        assert!(read_history("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn json_round_trip() {
        let t = two_point();
        assert_eq!(PredictionTable::from_json(&t.to_json()).unwrap(), t);
    }

    proptest! {
        #[test]
        fn repredict_is_monotone_and_exceeds_generated(
            outs in prop::collection::vec(1u32..500, 1..40),
            g1 in 0u32..600,
            dg in 0u32..100,
        ) {
            let history: Vec<(u32, u32)> = outs.iter().map(|&o| (50, o)).collect();
            let t = PredictionTable::build(&history, &[128]).unwrap();
            let a = t.repredict(50, g1).unwrap();
            let b = t.repredict(50, g1 + dg).unwrap();
            prop_assert!(a.tokens > g1);
            prop_assert!(b.tokens >= a.tokens);
            // tail means are exact
            let tail: Vec<u32> = outs.iter().copied().filter(|&o| o > g1).collect();
            if !tail.is_empty() {
                let mean = tail.iter().map(|&v| v as f64).sum::<f64>() / tail.len() as f64;
                let expected = ((mean + 0.5).floor() as u32).max(g1 + 1);
                prop_assert_eq!(a.tokens, expected);
            } else {
                prop_assert!(a.fallback);
            }
        }
    }
}
