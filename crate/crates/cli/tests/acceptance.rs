//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p kvpack-cli --test acceptance --release`. Failed
//! criteria are reported but only fail the process when
//! `KVPACK_ACCEPTANCE_STRICT` is set.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use kvpack::experiment::{self, ExperimentSpec, SearchSpec};
use kvpack::perf_models::{fit_linear, Sample};
use kvpack::placement::{
    place_best_fit, solve_exact, BestFitIndex, Candidate, Cluster, Knobs, PlacementCtx, SloSpec, Stage,
};
use kvpack::scaling::fit_demand;
use kvpack::sim::PredictionMode;
use kvpack::workload::{sample_history, TraceRecord};
use kvpack::{presets, run, DecodeModel, KvModel, PerfModelSet, Policy, PrefillModel, SimConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

// 1. model round-trip

fn c1_model_round_trip() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // (features, truth) per family: kv = h*tokens + j, prefill = k1*tokens + c1,
    // decode = k2*(b*l_ave) + c2*b + c3. j is one 128-token block; an intercept
    // far below the noise floor cannot be recovered to a relative tolerance.
    let families: [(&str, Vec<f64>); 3] =
        [("kv", vec![0.3125, 40.0]), ("prefill", vec![1.2e-4, 0.02]), ("decode", vec![3e-7, 3e-4, 0.035])];
    let mut worst_clean = 0.0f64;
    let mut worst_noisy = 0.0f64;
    let mut noisy_by = Vec::new();
    for (name, truth) in &families {
        for noisy in [false, true] {
            let n = if noisy { 1000 } else { 50 };
            let noise = Normal::new(0.0, 0.01).unwrap();
            let samples: Vec<Sample> = (0..n)
                .map(|_| {
                    let x: Vec<f64> = if *name == "decode" {
                        let b = rng.random_range(1..=64) as f64;
                        let l = rng.random_range(100.0..4000.0);
                        vec![b * l, b]
                    } else {
                        vec![rng.random_range(16.0..16000.0)]
                    };
                    let y: f64 = x.iter().zip(truth).map(|(a, k)| a * k).sum::<f64>() + truth[truth.len() - 1];
                    let y = if noisy { y * (1.0 + noise.sample(&mut rng)) } else { y };
                    (x, y)
                })
                .collect();
            let fit = fit_linear(&samples).expect("fit");
            let mut got = fit.coefficients.clone();
            got.push(fit.intercept);
            let err = got.iter().zip(truth).map(|(g, w)| rel(*g, *w)).fold(0.0, f64::max);
            if noisy {
                noisy_by.push(format!("{name} {err:.3}"));
                worst_noisy = worst_noisy.max(err);
            } else {
                worst_clean = worst_clean.max(err);
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst_clean <= 1e-9 && worst_noisy <= 0.05 && secs < 1.0,
        format!("noiseless max rel err {worst_clean:.2e}, 1% noise {worst_noisy:.3} ({}), {secs:.3}s", noisy_by.join(", ")),
    )
}

// 2. decode-time inversion

fn c2_inversion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut n = 0;
    while n < 1000 {
        let d = DecodeModel {
            k2: rng.random_range(1e-8..1e-5),
            c2: rng.random_range(1e-5..1e-2),
            c3: rng.random_range(1e-3..0.05),
            c_single: 0.05,
        };
        let b = rng.random_range(2..=256u32);
        let t_dec = rng.random_range(0.01..0.5);
        let Ok(l) = d.max_total_context(b, t_dec) else { continue };
        if l <= 0.0 {
            continue;
        }
        worst = worst.max(rel(d.iter_time_total(b, l), t_dec));
        n += 1;
    }
    outcome(worst <= 1e-9, format!("max rel err {worst:.2e} over {n} triples"))
}

// 3. mixed pairing peaks, against a timeline oracle

fn unit_models() -> PerfModelSet {
    PerfModelSet {
        kv: KvModel { h: 1.0, j: 0.0 },
        prefill: PrefillModel { k1: 1e-3, c1: 0.01 },
        decode: DecodeModel { k2: 1e-3, c2: 0.01, c3: 0.01, c_single: 0.02 },
    }
}

/// Peak KV of requests `(l_in, l_out)` started together: token `t` of every
/// request still generating holds `l_in + t` tokens.
fn timeline_peak(reqs: &[(u32, u32)]) -> f64 {
    let longest = reqs.iter().map(|r| r.1).max().unwrap_or(0);
    (1..=longest)
        .map(|t| reqs.iter().filter(|r| r.1 >= t).map(|r| (r.0 + t) as f64).sum::<f64>())
        .fold(0.0, f64::max)
}

fn c3_pairing_workload() -> Outcome {
    let lens = [(4u32, 1u32), (1, 4), (4, 1), (1, 4)];
    let work: Vec<TraceRecord> = lens
        .iter()
        .enumerate()
        .map(|(i, &(l_in, l_real))| TraceRecord { id: i as u64, arrival_time: 0.0, l_in, l_real })
        .collect();
    let mut cfg = SimConfig::new(unit_models(), SloSpec { t_pre: 10.0, t_dec: 0.04 }, 9.0);
    cfg.knobs = Knobs { gamma: 1.0, theta: 1.0 };
    cfg.max_workers = Some(2);
    let mut peaks = Vec::new();
    for policy in [Policy::Jsq, Policy::BestFit] {
        let out = run(&cfg, &work, &policy).expect("sim");
        let mut per: BTreeMap<usize, Vec<(u32, u32)>> = BTreeMap::new();
        for (row, &l) in out.requests.iter().zip(&lens) {
            per.entry(row.worker.expect("placed")).or_default().push(l);
        }
        let oracle = per.values().map(|r| timeline_peak(r)).fold(0.0, f64::max);
        peaks.push((oracle, out.metrics.kv_peak_max));
    }
    let (jsq, bf) = (peaks[0], peaks[1]);
    outcome(
        jsq == (10.0, 10.0) && bf == (7.0, 7.0),
        format!("jsq oracle {} sim {}; best-fit oracle {} sim {}", jsq.0, jsq.1, bf.0, bf.1),
    )
}

// 4. best-fit against the exact solver, with an independent checker

fn oracle_models() -> PerfModelSet {
    PerfModelSet {
        kv: KvModel { h: 1.0, j: 0.0 },
        prefill: PrefillModel { k1: 1e-3, c1: 0.01 },
        decode: DecodeModel { k2: 1e-4, c2: 1e-3, c3: 0.01, c_single: 0.012 },
    }
}

/// Constraints (a)-(h) for fresh requests arriving at 0 onto empty workers,
/// written out directly from the model equations.
#[allow(clippy::too_many_arguments)]
fn check_assignment(
    reqs: &[Candidate],
    x: &BTreeMap<u64, usize>,
    workers_used: usize,
    max_workers: usize,
    m: &PerfModelSet,
    slo: SloSpec,
    knobs: Knobs,
    capacity: f64,
) -> Result<(), String> {
    // (a) each request on exactly one worker; (g)/(h) ids within the pool
    if x.len() != reqs.len() || reqs.iter().any(|r| !x.contains_key(&r.id)) {
        return Err("(a) not every request assigned once".into());
    }
    let mut per: BTreeMap<usize, Vec<&Candidate>> = BTreeMap::new();
    for r in reqs {
        let w = x[&r.id];
        if w >= max_workers {
            return Err(format!("(g) worker {w} outside the pool"));
        }
        per.entry(w).or_default().push(r);
    }
    // (f) used workers are exactly those holding requests
    if per.len() != workers_used {
        return Err(format!("(f) workers_used {workers_used} but {} workers hold requests", per.len()));
    }
    let tol = |v: f64| 1e-9 * v.abs().max(1.0);
    for (w, rs) in &per {
        let b = rs.len() as f64;
        let ctx: f64 = rs.iter().map(|r| r.l_in as f64 + knobs.gamma * r.l_pred as f64).sum();
        let d = &m.decode;
        let ok_b = if rs.len() == 1 {
            d.c_single <= slo.t_dec
        } else {
            let budget = knobs.theta * (slo.t_dec - d.c3 - d.c2 * b) / d.k2;
            ctx <= budget + tol(budget)
        };
        if !ok_b {
            return Err(format!("(b) worker {w}"));
        }
        let prefill = m.prefill.k1 * rs.iter().map(|r| r.l_in as f64).sum::<f64>() + m.prefill.c1;
        if prefill > slo.t_pre + tol(slo.t_pre) {
            return Err(format!("(c) worker {w}"));
        }
        // (d) has no ongoing decodes to protect on a fresh worker
        let longest = rs.iter().map(|r| r.l_pred).max().unwrap_or(0);
        for k in 0..longest {
            let kv: f64 = rs
                .iter()
                .filter(|r| k < r.l_pred)
                .map(|r| m.kv.h * (r.l_in + k + 1) as f64 + m.kv.j)
                .sum();
            if kv > capacity + tol(capacity) {
                return Err(format!("(e) worker {w} iteration {k}: {kv} > {capacity}"));
            }
        }
    }
    Ok(())
}

fn c4_exact_oracle() -> Outcome {
    let t = Instant::now();
    let m = oracle_models();
    let slo = SloSpec { t_pre: 0.1, t_dec: 0.04 };
    let knobs = Knobs { gamma: 1.0, theta: 1.0 };
    let ctx = PlacementCtx::new(&m, slo, knobs, 0.0, Stage::Colocated);
    let capacity = 80.0;
    let max_workers = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut solved, mut drawn, mut worst_gap, mut opt_wins) = (0, 0, i64::MIN, 0);
    let mut failures = Vec::new();
    while solved < 100 && drawn < 10_000 {
        drawn += 1;
        let n = rng.random_range(2..=8u64);
        let reqs: Vec<Candidate> = (0..n)
            .map(|i| Candidate::new(i, 0.0, rng.random_range(1..=30), rng.random_range(1..=30)))
            .collect();
        let Ok(exact) = solve_exact(&reqs, &Cluster::new(capacity, None), &ctx, max_workers) else { continue };
        solved += 1;
        if let Err(e) = check_assignment(&reqs, &exact.x, exact.workers_used, max_workers, &m, slo, knobs, capacity) {
            failures.push(format!("instance {drawn}: {e}"));
        }
        let mut cl = Cluster::new(capacity, None);
        for r in &reqs {
            place_best_fit(&mut cl, r, &ctx).expect("best-fit places");
        }
        let gap = cl.workers.len() as i64 - exact.workers_used as i64;
        worst_gap = worst_gap.max(gap);
        opt_wins += usize::from(gap > 0);
        if gap > 1 {
            failures.push(format!("instance {drawn}: best-fit {} vs exact {}", cl.workers.len(), exact.workers_used));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = solved == 100 && failures.is_empty() && secs < 60.0;
    outcome(
        pass,
        format!(
            "{solved} instances, best-fit - exact <= {worst_gap} (exact strictly better on {opt_wins}), {} violations, {secs:.1}s{}",
            failures.len(),
            failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

// 5. SLO guarantee under oracle predictions

fn spec(json: serde_json::Value) -> ExperimentSpec {
    ExperimentSpec::from_json(&json.to_string()).expect("spec parses")
}

fn c5_slo_guarantee() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (label, knobs, floor) in [("gamma=1", Some((1.0, 1.0)), 1.0), ("gamma=0.5", None, 0.99)] {
        let mut s = serde_json::json!({
            "preset": "llama2-70b-a100",
            "rates": [10],
            "seeds": (1..=20).collect::<Vec<u64>>(),
            "workload": { "duration": 60 },
        });
        if let Some((g, t)) = knobs {
            s["knobs"] = serde_json::json!({ "gamma": g, "theta": t });
        }
        let r = spec(s).resolve().expect("resolves");
        let rows = experiment::sweep(&r).expect("sweep");
        let min_att = rows.iter().map(|x| x.slo_attainment).fold(1.0, f64::min);
        let mean_att = rows.iter().map(|x| x.slo_attainment).sum::<f64>() / rows.len() as f64;
        let overflow: u64 = rows.iter().map(|x| x.kv_overflow_events).sum();
        let ok = if floor == 1.0 { overflow == 0 && min_att == 1.0 } else { mean_att >= floor };
        pass &= ok;
        parts.push(format!("{label}: min attainment {min_att:.4}, mean {mean_att:.4}, overflow {overflow}"));
    }
    outcome(pass, parts.join("; "))
}

// 6 and 7. minimal-worker sweep

struct CompareData {
    /// (policy, rate) -> workers per seed
    workers: BTreeMap<(String, u64), Vec<usize>>,
    rates: Vec<f64>,
    secs: f64,
}

fn compare_sweep() -> CompareData {
    let t = Instant::now();
    let rates = vec![5.0, 10.0, 15.0, 20.0, 25.0];
    let r = spec(serde_json::json!({
        "preset": "llama2-70b-a100",
        "knobs": { "gamma": 1.0, "theta": 1.0 },
        "policies": ["best-fit", "p2", "jsq"],
        "rates": rates,
        "seeds": [1, 2, 3, 4, 5],
        "workload": { "duration": 120 },
    }))
    .resolve()
    .expect("resolves");
    let rows = experiment::compare(&r, &SearchSpec { max_workers: 256, target: 1.0 }, true).expect("compare");
    let mut workers: BTreeMap<(String, u64), Vec<usize>> = BTreeMap::new();
    for row in rows {
        workers.entry((row.policy, row.rate as u64)).or_default().push(row.workers);
    }
    CompareData { workers, rates, secs: t.elapsed().as_secs_f64() }
}

fn mean(v: &[usize]) -> f64 {
    v.iter().sum::<usize>() as f64 / v.len() as f64
}

fn c6_linearity(d: &CompareData) -> Outcome {
    // one point per rate: the seed mean, rounded to a worker count
    let means: Vec<f64> = d.rates.iter().map(|&r| mean(&d.workers[&("best-fit".to_string(), r as u64)])).collect();
    let history: Vec<(f64, u32)> = d.rates.iter().zip(&means).map(|(&r, &m)| (r, m.round() as u32)).collect();
    let fit = match fit_demand(&history) {
        Ok(f) => f,
        Err(e) => return outcome(false, format!("fit_demand failed: {e}")),
    };
    let m = fit.model;
    let worst = d
        .rates
        .iter()
        .zip(&means)
        .filter(|(&r, _)| r > m.r_floor)
        .map(|(&r, &observed)| rel(m.raw_workers(r) as f64, observed))
        .fold(0.0, f64::max);
    let shown: Vec<String> = means.iter().map(|m| format!("{m:.1}")).collect();
    outcome(
        fit.r_squared >= 0.95 && worst <= 0.1 && d.secs < 600.0,
        format!(
            "best-fit mean workers [{}], R^2 {:.3} above knee {}, line {:.3}*rate{:+.3}, max deviation {:.1}%, sweep {:.0}s",
            shown.join(", "),
            fit.r_squared,
            fit.knee,
            m.k5,
            m.c5,
            worst * 100.0,
            d.secs
        ),
    )
}

fn c7_ordering(d: &CompareData) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for &r in &d.rates {
        let get = |p: &str| mean(&d.workers[&(p.to_string(), r as u64)]);
        let (bf, p2, jsq) = (get("best-fit"), get("p2"), get("jsq"));
        let ok = bf <= p2 && p2 <= jsq;
        pass &= ok;
        parts.push(format!("{r}: {bf:.1}/{p2:.1}/{jsq:.1}{}", if ok { "" } else { " x" }));
    }
    outcome(pass, format!("mean workers best-fit/p2/jsq at rate {}", parts.join(", ")))
}

// 8. rebalancer

fn c8_rebalance() -> Outcome {
    let mut att = [0.0f64; 2];
    let mut max_delta = f64::NEG_INFINITY;
    let mut moves = 0;
    let preset = presets::serving("llama2-70b-a100").unwrap();
    for seed in 1..=20u64 {
        let work = kvpack::workload::generate(10.0, 60.0, &presets::sharegpt_like(), seed);
        for (i, rebalance) in [false, true].into_iter().enumerate() {
            let mut cfg = SimConfig::new(preset.models, preset.slo, preset.kv_capacity);
            cfg.seed = seed;
            cfg.prediction = PredictionMode::Noisy { spread: 0.3 };
            cfg.rebalance = rebalance;
            let m = run(&cfg, &work, &Policy::BestFit).expect("sim").metrics;
            att[i] += m.slo_attainment / 20.0;
            if rebalance {
                max_delta = max_delta.max(m.rebalance_max_delta);
                moves += m.rebalance_moves;
            }
        }
    }
    outcome(
        att[1] >= att[0] && max_delta <= 0.0,
        format!(
            "mean attainment off {:.6} on {:.6}, {moves} moves, largest per-heartbeat distance change {max_delta:.3e}",
            att[0], att[1]
        ),
    )
}

// 9. placer scaling

fn placer_ms(n: usize) -> f64 {
    let p = presets::serving("llama2-70b-a100").unwrap();
    let ctx = PlacementCtx::new(&p.models, p.slo, Knobs::default(), 0.0, Stage::Colocated);
    let hist = sample_history(&presets::sharegpt_like(), n, 9);
    let mut times: Vec<f64> = (0..5)
        .map(|_| {
            let mut cl = Cluster::new(p.kv_capacity, None);
            let t = Instant::now();
            let mut idx = BestFitIndex::new(&cl, &ctx);
            for (i, &(l_in, l_out)) in hist.iter().enumerate() {
                idx.place(&mut cl, &Candidate::new(i as u64, 0.0, l_in, l_out), &ctx).expect("places");
            }
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[2]
}

fn heartbeat_ms() -> f64 {
    // one 50 ms heartbeat at 25 req/s is about one request; place 25 into a
    // cluster already holding 1000 to be generous
    let p = presets::serving("llama2-70b-a100").unwrap();
    let ctx = PlacementCtx::new(&p.models, p.slo, Knobs::default(), 0.0, Stage::Colocated);
    let hist = sample_history(&presets::sharegpt_like(), 1025, 10);
    let mut cl = Cluster::new(p.kv_capacity, None);
    let mut idx = BestFitIndex::new(&cl, &ctx);
    for (i, &(l_in, l_out)) in hist[..1000].iter().enumerate() {
        idx.place(&mut cl, &Candidate::new(i as u64, 0.0, l_in, l_out), &ctx).expect("places");
    }
    let ctx = ctx.at(0.05);
    let t = Instant::now();
    let mut idx = BestFitIndex::new(&cl, &ctx);
    for (i, &(l_in, l_out)) in hist[1000..].iter().enumerate() {
        idx.place(&mut cl, &Candidate::new(1000 + i as u64, 0.05, l_in, l_out), &ctx).expect("places");
    }
    t.elapsed().as_secs_f64() * 1e3
}

fn c9_complexity() -> Outcome {
    let small = placer_ms(1000);
    let large = placer_ms(10_000);
    let hb = heartbeat_ms();
    let ratio = large / small;
    outcome(
        ratio <= 15.0 && hb < 50.0,
        format!("1k {small:.2} ms, 10k {large:.2} ms, ratio {ratio:.1}; 25-request heartbeat {hb:.2} ms"),
    )
}

// 10. group planning

fn c10_groups() -> Outcome {
    let rates: Vec<f64> = vec![1.0, 7.5, 12.0, 33.3, 50.0, 99.9, 150.0, 333.0, 1000.0, 2718.28];
    let s = spec(serde_json::json!({
        "preset": "llama2-70b-a100",
        "plan": {
            "rates": rates,
            "demand": { "k5": 0.35, "c5": 1.2, "r_floor": 0.0 },
            "e": 0.1,
            "sched_rate_limit": 40.0,
        },
    }));
    let plan = match experiment::plan(&s) {
        Ok(p) => p,
        Err(e) => return outcome(false, format!("plan failed: {e}")),
    };
    let mut bad = Vec::new();
    let mut max_groups = 0;
    for row in &plan.rows {
        max_groups = max_groups.max(row.n_groups);
        if row.workers_per_group.iter().any(|&w| w < 5) {
            bad.push(format!("rate {}: workers per group {:?}", row.rate, row.workers_per_group));
        }
        if row.group_rates.iter().sum::<f64>() != row.rate {
            bad.push(format!("rate {}: group rates sum to {}", row.rate, row.group_rates.iter().sum::<f64>()));
        }
    }
    outcome(
        bad.is_empty() && plan.rows.len() == rates.len(),
        format!("{} plans, up to {max_groups} groups{}", plan.rows.len(), bad.first().map(|b| format!("; {b}")).unwrap_or_default()),
    )
}

// 11. determinism of every command

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn write_profiles(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut kv = String::from("x1,y\n");
    let mut pre = String::from("x1,y\n");
    let mut dec = String::from("x1,x2,y\n");
    for _ in 0..200 {
        let t: f64 = rng.random_range(16.0..8000.0);
        kv += &format!("{t},{}\n", (0.3125 * t) * (1.0 + noise.sample(&mut rng)));
        pre += &format!("{t},{}\n", (1.2e-4 * t + 0.02) * (1.0 + noise.sample(&mut rng)));
        let b = rng.random_range(2..=64) as f64;
        let l: f64 = rng.random_range(100.0..4000.0);
        dec += &format!("{},{b},{}\n", b * l, (3e-7 * b * l + 3e-4 * b + 0.035) * (1.0 + noise.sample(&mut rng)));
    }
    std::fs::write(dir.join("kv.csv"), kv).unwrap();
    std::fs::write(dir.join("prefill.csv"), pre).unwrap();
    std::fs::write(dir.join("decode.csv"), dec).unwrap();
}

fn c11_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let base = tmp.path();
    write_profiles(base);
    let cfg = base.join("spec.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "preset": "llama2-70b-a100",
            "policies": ["best-fit", "p2", "jsq"],
            "rates": [4, 8],
            "seeds": [3],
            "workload": { "duration": 20 },
            "prediction": { "kind": "noisy", "spread": 0.3 },
            "rebalance": true,
            "record_events": true,
            "plan": { "rates": [4, 8, 12] },
        })
        .to_string(),
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_kvpack");
    let mut checked = BTreeSet::new();
    let mut diffs = Vec::new();
    for cmd in ["fit", "plan", "simulate", "sweep", "compare"] {
        let mut runs = Vec::new();
        for attempt in 0..2 {
            let out = base.join(format!("{cmd}-{attempt}"));
            let mut c = Command::new(bin);
            c.arg(cmd).arg("--out").arg(&out).arg("--seed").arg("3");
            if cmd == "fit" {
                c.args(["--kv", "kv.csv", "--prefill", "prefill.csv", "--decode", "decode.csv"]).current_dir(base);
            } else {
                c.arg("--config").arg(&cfg);
            }
            let status = c.output().expect("runs the binary");
            if !status.status.success() {
                return outcome(false, format!("{cmd} failed: {}", String::from_utf8_lossy(&status.stderr)));
            }
            runs.push(files(&out));
        }
        if runs[0].is_empty() {
            diffs.push(format!("{cmd}: no output"));
        } else if runs[0] != runs[1] {
            diffs.push(format!("{cmd}: outputs differ"));
        }
        checked.insert(cmd);
    }
    outcome(
        diffs.is_empty(),
        format!("{} commands run twice{}", checked.len(), if diffs.is_empty() { ", byte-identical".into() } else { format!(": {}", diffs.join("; ")) }),
    )
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "model round-trip", c1_model_round_trip()),
        (2, "decode inversion", c2_inversion()),
        (3, "pairing KV peaks", c3_pairing_workload()),
        (4, "exact oracle", c4_exact_oracle()),
        (5, "SLO guarantee", c5_slo_guarantee()),
    ];
    let sweep = compare_sweep();
    results.push((6, "demand linearity", c6_linearity(&sweep)));
    results.push((7, "policy ordering", c7_ordering(&sweep)));
    results.push((8, "rebalancer", c8_rebalance()));
    results.push((9, "placer complexity", c9_complexity()));
    results.push((10, "group planning", c10_groups()));
    results.push((11, "determinism", c11_determinism()));
    let mut failed = 0;
    for (n, name, o) in &results {
        println!("criterion {n:>2} {name:<18} {}  {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 && std::env::var_os("KVPACK_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
