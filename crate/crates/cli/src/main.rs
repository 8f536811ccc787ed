use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use kvpack::experiment::{self, ExperimentError, ExperimentSpec, Resolved};
use kvpack::perf_models::{fit_model_set, load_samples, ModelError};
use kvpack::placement::write_jsonl;
use kvpack::scaling::ScalingError;
use kvpack::sim::{self, SimError};
use kvpack::worker_config::PlanError;
use kvpack::DataError;

/// SLO-aware placement and scaling experiments for batched LLM serving.
#[derive(Parser)]
#[command(name = "kvpack", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    global: Global,
}

#[derive(Args, Clone)]
struct Global {
    /// Experiment spec (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the spec's seed list with this single seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; results go to stdout when neither this nor the spec sets one.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Parallel simulations (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit KV, prefill and decode models from profiling CSVs.
    Fit {
        /// KV samples: `x1,y` = tokens, memory.
        #[arg(long)]
        kv: PathBuf,
        /// Prefill samples: `x1,y` = batch input tokens, seconds.
        #[arg(long)]
        prefill: PathBuf,
        /// Decode samples: `x1,x2,y` = total context, batch size, seconds; batch-size-1 rows give the lone-request latency.
        #[arg(long)]
        decode: PathBuf,
    },
    /// Worker size, worker counts and scheduler groups per arrival rate.
    Plan,
    /// Run every (policy, rate, seed) point and write per-request results and logs.
    Simulate,
    /// Long-form metrics table over every (policy, rate, seed) point.
    Sweep,
    /// Minimal workers reaching the attainment target, per policy and rate.
    Compare {
        /// Report non-monotone searches in the table instead of failing.
        #[arg(long)]
        allow_non_monotone: bool,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ExperimentError>() {
            return match e {
                ExperimentError::Config(_) | ExperimentError::Data(_) | ExperimentError::Sim(_) => EXIT_CONFIG,
                ExperimentError::Infeasible(_) | ExperimentError::NonConvergence { .. } => EXIT_INFEASIBLE,
            };
        }
        if cause.is::<DataError>() || cause.is::<SimError>() || cause.is::<UsageError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return match e {
                ModelError::SloInfeasible { .. } => EXIT_INFEASIBLE,
                _ => EXIT_CONFIG,
            };
        }
        if let Some(e) = cause.downcast_ref::<PlanError>() {
            return match e {
                PlanError::Invalid(_) => EXIT_CONFIG,
                _ => EXIT_INFEASIBLE,
            };
        }
        if cause.is::<ScalingError>() {
            return EXIT_INFEASIBLE;
        }
    }
    EXIT_INTERNAL
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    match cli.cmd {
        Cmd::Fit { kv, prefill, decode } => cmd_fit(&g, &kv, &prefill, &decode),
        Cmd::Plan => {
            let spec = load_spec(&g)?;
            let plan = kvpack::parallel::with_jobs(g.jobs, || experiment::plan(&spec))?;
            let mut text = serde_json::to_string_pretty(&plan)?;
            text.push('\n');
            emit(&out_dir(&g, &spec), "plan.json", text.as_bytes())?;
            for row in &plan.rows {
                eprintln!(
                    "rate {:>8.3}  gpus/worker {}  workers {:>4}  groups {}{}",
                    row.rate,
                    row.gpus_per_worker,
                    row.n_workers,
                    row.n_groups,
                    if row.below_floor { "  (below floor)" } else { "" }
                );
            }
            Ok(())
        }
        Cmd::Simulate => {
            let spec = load_spec(&g)?;
            let r = spec.resolve()?;
            cmd_simulate(&g, &spec, &r)
        }
        Cmd::Sweep => {
            let spec = load_spec(&g)?;
            let r = spec.resolve()?;
            let rows = kvpack::parallel::with_jobs(g.jobs, || experiment::sweep(&r))?;
            emit(&out_dir(&g, &spec), "sweep.csv", &csv_bytes(&rows)?)
        }
        Cmd::Compare { allow_non_monotone } => {
            let spec = load_spec(&g)?;
            let r = spec.resolve()?;
            let rows = kvpack::parallel::with_jobs(g.jobs, || experiment::compare(&r, &spec.search, allow_non_monotone))?;
            let summary = experiment::summarize(&rows, &r.policies);
            let dir = out_dir(&g, &spec);
            if dir.is_some() {
                emit(&dir, "compare.csv", &csv_bytes(&rows)?)?;
            }
            emit(&dir, "compare_summary.csv", &csv_bytes(&summary)?)?;
            for row in rows.iter().filter(|r| !r.monotone) {
                eprintln!("warning: {} at {} req/s (seed {}) is not monotone in workers", row.policy, row.rate, row.seed);
            }
            Ok(())
        }
    }
}

fn load_spec(g: &Global) -> Result<ExperimentSpec> {
    let path = g.config.as_ref().ok_or_else(|| UsageError("--config PATH is required".into()))?;
    let mut spec = ExperimentSpec::load(path)?;
    if let Some(seed) = g.seed {
        spec.seed = seed;
        spec.seeds = vec![seed];
    }
    Ok(spec)
}

fn out_dir(g: &Global, spec: &ExperimentSpec) -> Option<PathBuf> {
    g.out.clone().or_else(|| spec.out.as_ref().map(|p| if p.is_absolute() { p.clone() } else { spec.base_dir.join(p) }))
}

/// Writes `bytes` to `dir/name`, or to stdout without a directory.
fn emit(dir: &Option<PathBuf>, name: &str, bytes: &[u8]) -> Result<()> {
    match dir {
        Some(d) => {
            fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
            let path = d.join(name);
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    experiment::write_csv(&mut buf, rows)?;
    Ok(buf)
}

fn cmd_fit(g: &Global, kv: &Path, prefill: &Path, decode: &Path) -> Result<()> {
    let kv_s = load_samples(kv)?;
    let pre_s = load_samples(prefill)?;
    let dec_s = load_samples(decode)?;
    let (models, reports) = fit_model_set(&kv_s, &pre_s, &dec_s).context("fitting performance models")?;
    for r in &reports {
        eprintln!("{:<8} n={:<6} residual_std={:.6e}", r.family, r.n_samples, r.residual_std);
    }
    let mut text = models.to_json();
    text.push('\n');
    emit(&g.out, "models.json", text.as_bytes())
}

fn cmd_simulate(g: &Global, spec: &ExperimentSpec, r: &Resolved) -> Result<()> {
    let points = r.points();
    let outputs = kvpack::parallel::with_jobs(g.jobs, || {
        kvpack::parallel::map(&points, |(policy, rate, seed)| {
            sim::run(&r.config(policy, *seed), &r.workload(*rate, *seed), policy)
        })
    });
    let dir = out_dir(g, spec);
    let mut summary = Vec::new();
    for ((policy, rate, seed), out) in points.iter().zip(outputs) {
        let out = out?;
        let label = format!("{}_r{}_s{}", policy.name(), rate, seed);
        if let Some(d) = &dir {
            let sub = d.join(&label);
            fs::create_dir_all(&sub).with_context(|| format!("creating {}", sub.display()))?;
            fs::write(sub.join("requests.csv"), csv_bytes(&out.requests)?)?;
            write_jsonl(BufWriter::new(File::create(sub.join("events.jsonl"))?), &out.events)?;
            write_jsonl(BufWriter::new(File::create(sub.join("decisions.jsonl"))?), &out.decisions)?;
            if !out.scale_log.is_empty() {
                write_jsonl(BufWriter::new(File::create(sub.join("scale.jsonl"))?), &out.scale_log)?;
            }
            let mut m = serde_json::to_string_pretty(&out.metrics)?;
            m.push('\n');
            fs::write(sub.join("metrics.json"), m)?;
        }
        eprintln!(
            "{label}: attainment {:.4}  p99 ttft {:.3}s  p99 atgt {:.4}s  workers {}",
            out.metrics.slo_attainment, out.metrics.p99_ttft, out.metrics.p99_atgt, out.metrics.workers_used_max
        );
        summary.push(serde_json::json!({
            "policy": policy.name(),
            "rate": rate,
            "seed": seed,
            "metrics": out.metrics,
        }));
    }
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    emit(&dir, "summary.json", text.as_bytes())
}
