//! Request streams: Poisson arrivals, piecewise-linear length distributions
//! and CSV traces.
//!
//! The default distribution is synthetic. Input lengths follow a
//! lognormal-like CDF over the prompt ranges `[1,128)`, `[128,256)`, ...,
//! `[2048,4096]`; output lengths have one CDF per range with medians rising
//! with the prompt length.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::predictor::{bucket_of, DEFAULT_BUCKET_EDGES};
use crate::DataError;

pub const DEFAULT_CONTEXT_LIMIT: u32 = 4096;

/// Piecewise-linear CDF given by `(value, cumulative probability)` knots.
/// Probability mass below the first knot sits on the first knot's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct PiecewiseCdf {
    knots: Vec<(f64, f64)>,
}

impl TryFrom<Vec<(f64, f64)>> for PiecewiseCdf {
    type Error = String;
    fn try_from(knots: Vec<(f64, f64)>) -> Result<Self, String> {
        Self::new(knots)
    }
}

impl From<PiecewiseCdf> for Vec<(f64, f64)> {
    fn from(c: PiecewiseCdf) -> Self {
        c.knots
    }
}

impl PiecewiseCdf {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self, String> {
        if knots.is_empty() {
            return Err("a CDF needs at least one knot".into());
        }
        for w in knots.windows(2) {
            if w[1].0 < w[0].0 || w[1].1 < w[0].1 {
                return Err("CDF knots must be non-decreasing in value and probability".into());
            }
        }
        let (_, last) = knots[knots.len() - 1];
        if (last - 1.0).abs() > 1e-12 || knots.iter().any(|k| !(0.0..=1.0).contains(&k.1) || !k.0.is_finite()) {
            return Err("CDF probabilities must lie in [0, 1] and end at 1".into());
        }
        Ok(Self { knots })
    }

    pub fn point_mass(value: f64) -> Self {
        Self { knots: vec![(value, 1.0)] }
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Continuous quantile at `u` in `[0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let i = self.knots.partition_point(|k| k.1 < u);
        if i == 0 {
            return self.knots[0].0;
        }
        let i = i.min(self.knots.len() - 1);
        let (x0, p0) = self.knots[i - 1];
        let (x1, p1) = self.knots[i];
        if p1 <= p0 {
            x1
        } else {
            x0 + (x1 - x0) * (u - p0) / (p1 - p0)
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let i = self.knots.partition_point(|k| k.0 <= x);
        if i == 0 {
            return 0.0;
        }
        if i == self.knots.len() {
            return 1.0;
        }
        let (x0, p0) = self.knots[i - 1];
        let (x1, p1) = self.knots[i];
        p0 + (p1 - p0) * (x - x0) / (x1 - x0)
    }

    /// Token count: quantile rounded up, at least 1.
    pub fn sample_tokens<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        (self.quantile(u).ceil().max(1.0)).min(u32::MAX as f64) as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthDistribution {
    pub input_cdf: PiecewiseCdf,
    /// Upper edges of the prompt-length buckets that select an output CDF.
    pub output_bucket_edges: Vec<u32>,
    pub output_cdfs: Vec<PiecewiseCdf>,
    #[serde(default = "default_context_limit")]
    pub context_limit: u32,
}

fn default_context_limit() -> u32 {
    DEFAULT_CONTEXT_LIMIT
}

impl LengthDistribution {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.output_bucket_edges.len() != self.output_cdfs.len() || self.output_cdfs.is_empty() {
            return Err(DataError::Invalid("need one output CDF per bucket edge".into()));
        }
        if self.output_bucket_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::Invalid("bucket edges must ascend".into()));
        }
        if self.context_limit < 2 {
            return Err(DataError::Invalid("context limit must be at least 2".into()));
        }
        Ok(())
    }

    /// Both lengths of a constant request.
    pub fn constant(l_in: u32, l_real: u32) -> Self {
        Self {
            input_cdf: PiecewiseCdf::point_mass(l_in as f64),
            output_bucket_edges: vec![DEFAULT_CONTEXT_LIMIT],
            output_cdfs: vec![PiecewiseCdf::point_mass(l_real as f64)],
            context_limit: DEFAULT_CONTEXT_LIMIT,
        }
    }

    /// Draws `(l_in, l_real)` with `l_in + l_real <= context_limit`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (u32, u32) {
        let k = self.context_limit;
        let l_in = self.input_cdf.sample_tokens(rng).min(k - 1);
        let edges = &self.output_bucket_edges;
        let b = bucket_of(edges, l_in).unwrap_or(edges.len() - 1);
        let l_out = self.output_cdfs[b].sample_tokens(rng).min(k - l_in);
        (l_in, l_out)
    }

    /// Synthetic chat-style preset.
    pub fn sharegpt_like() -> Self {
        let cdf = |k: &[(f64, f64)]| PiecewiseCdf::new(k.to_vec()).expect("preset CDF is valid");
        let input_cdf = cdf(&[
            (1.0, 0.0),
            (16.0, 0.06),
            (32.0, 0.14),
            (64.0, 0.28),
            (128.0, 0.47),
            (256.0, 0.68),
            (512.0, 0.85),
            (1024.0, 0.95),
            (2048.0, 0.99),
            (3072.0, 1.0),
        ]);
        // output medians rise with prompt length: ~90, 150, 220, 280, 320, 350
        let out = |m: f64| {
            cdf(&[
                (1.0, 0.0),
                (m * 0.15, 0.08),
                (m * 0.5, 0.27),
                (m, 0.5),
                (m * 1.8, 0.75),
                (m * 3.0, 0.92),
                (m * 4.5, 1.0),
            ])
        };
        Self {
            input_cdf,
            output_bucket_edges: DEFAULT_BUCKET_EDGES.to_vec(),
            output_cdfs: [90.0, 150.0, 220.0, 280.0, 320.0, 350.0].iter().map(|&m| out(m)).collect(),
            context_limit: DEFAULT_CONTEXT_LIMIT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: u64,
    pub arrival_time: f64,
    pub l_in: u32,
    pub l_real: u32,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Arrival times of a Poisson process of `rate` per second over `[0, duration)`.
pub fn gen_poisson_arrivals(rate: f64, duration: f64, seed: u64) -> Vec<f64> {
    assert!(rate > 0.0, "arrival rate must be positive");
    let exp = Exp::new(rate).expect("positive rate");
    let mut rng = rng_for(seed, 0);
    let mut t = 0.0;
    let mut out = Vec::new();
    loop {
        t += exp.sample(&mut rng);
        if t >= duration {
            return out;
        }
        out.push(t);
    }
}

/// Poisson stream with lengths drawn from `dist`.
pub fn generate(rate: f64, duration: f64, dist: &LengthDistribution, seed: u64) -> Vec<TraceRecord> {
    let times = gen_poisson_arrivals(rate, duration, seed);
    let mut rng = rng_for(seed, 1);
    times
        .into_iter()
        .enumerate()
        .map(|(i, arrival_time)| {
            let (l_in, l_real) = dist.sample(&mut rng);
            TraceRecord { id: i as u64, arrival_time, l_in, l_real }
        })
        .collect()
}

/// `(l_in, l_real)` pairs for building a prediction table.
pub fn sample_history(dist: &LengthDistribution, n: usize, seed: u64) -> Vec<(u32, u32)> {
    let mut rng = rng_for(seed, 2);
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<TraceRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::Csv(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "arrival_time", "l_in", "l_real"] {
        return Err(DataError::Malformed { line: 1, reason: "header must be id,arrival_time,l_in,l_real".into() });
    }
    let mut out: Vec<TraceRecord> = Vec::new();
    for (i, row) in rdr.deserialize::<TraceRecord>().enumerate() {
        let line = i + 2;
        let rec = row.map_err(|e| DataError::Malformed { line, reason: e.to_string() })?;
        if rec.l_in == 0 || rec.l_real == 0 || !rec.arrival_time.is_finite() || rec.arrival_time < 0.0 {
            return Err(DataError::Malformed { line, reason: "lengths must be >= 1 and times finite, >= 0".into() });
        }
        if out.last().is_some_and(|p| rec.arrival_time < p.arrival_time) {
            return Err(DataError::NonMonotoneTime { line });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>, DataError> {
    let f = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    read_trace(f).map_err(|e| e.at(path))
}

pub fn write_trace<W: Write>(writer: W, records: &[TraceRecord]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "arrival_time", "l_in", "l_real"]).map_err(|e| DataError::Csv(e.to_string()))?;
    for r in records {
        // shortest round-trip float formatting keeps export -> load exact
        w.write_record([r.id.to_string(), r.arrival_time.to_string(), r.l_in.to_string(), r.l_real.to_string()])
            .map_err(|e| DataError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| DataError::Csv(e.to_string()))
}

pub fn export_trace(records: &[TraceRecord], path: &Path) -> Result<(), DataError> {
    let f = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    write_trace(std::io::BufWriter::new(f), records)
}
