//! Runs every session of an experiment and turns the results into CSV rows.
//!
//! Sessions are independent; with the `parallel` feature they run on the
//! rayon pool of the caller, otherwise one after another. Rows always come
//! out in canonical order (variant, sweep point, replication, user), so the
//! CSV bytes do not depend on how the work was scheduled.
//!
//! Raw CSV, one row per user and session:
//! `sweep_value,replication,user,config_hash,seed,n,model,scheduler,selector,
//! mean_q,std_q,objective,rebuf_frac,rebuf_s,startup_s,losses,wasted_bits`
//!
//! Aggregate CSV, one row per sweep point; each `*_mean`/`*_std` pair is the
//! mean and population standard deviation over that point's raw rows:
//! `sweep_value,sessions,rows,objective_mean,objective_std,mean_q_mean,mean_q_std,
//! rebuf_s_mean,rebuf_s_std,rebuf_frac_mean,rebuf_frac_std,losses_mean,losses_std`

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{config_hash, ExperimentConfig, SessionJob};
use crate::engine::{self, SessionResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    /// Empty when the experiment has no sweep or the value is unlimited.
    pub sweep_value: String,
    pub replication: usize,
    pub user: usize,
    pub config_hash: String,
    pub seed: u64,
    pub n: usize,
    pub model: String,
    pub scheduler: String,
    pub selector: String,
    pub mean_q: f64,
    pub std_q: f64,
    pub objective: f64,
    pub rebuf_frac: f64,
    pub rebuf_s: f64,
    pub startup_s: f64,
    pub losses: usize,
    pub wasted_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub sweep_value: String,
    pub sessions: usize,
    pub rows: usize,
    pub objective_mean: f64,
    pub objective_std: f64,
    pub mean_q_mean: f64,
    pub mean_q_std: f64,
    pub rebuf_s_mean: f64,
    pub rebuf_s_std: f64,
    pub rebuf_frac_mean: f64,
    pub rebuf_frac_std: f64,
    pub losses_mean: f64,
    pub losses_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantOutput {
    pub name: String,
    pub raw: Vec<RawRow>,
    pub aggregate: Vec<AggregateRow>,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub variants: Vec<VariantOutput>,
    /// Sessions that failed, as `(variant, sweep value, replication, error)`.
    pub failures: Vec<(String, String, usize, Error)>,
    /// Constraint violations summed over every session; zero when correct.
    pub violations: u64,
}

pub fn format_value(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn run_all(jobs: &[SessionJob]) -> Vec<Result<SessionResult>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        jobs.par_iter().map(|j| engine::run(&j.config)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.iter().map(|j| engine::run(&j.config)).collect()
    }
}

/// [`run`] on a dedicated pool of `jobs` threads (`None`: rayon's default).
/// Without the `parallel` feature `jobs` is ignored.
pub fn run_with_jobs(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<ExperimentOutput> {
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.unwrap_or(0))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| run(cfg))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        run(cfg)
    }
}

/// Runs the experiment. Per-session failures are collected rather than
/// aborting, so the rows of the sessions that did finish survive.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let jobs = cfg.jobs()?;
    let results = run_all(&jobs);
    Ok(collect(cfg, &jobs, results))
}

/// [`run`] on the calling thread, whatever the feature set.
pub fn run_sequential(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let jobs = cfg.jobs()?;
    let results = jobs.iter().map(|j| engine::run(&j.config)).collect();
    Ok(collect(cfg, &jobs, results))
}

fn collect(
    cfg: &ExperimentConfig,
    jobs: &[SessionJob],
    results: Vec<Result<SessionResult>>,
) -> ExperimentOutput {
    let names = cfg.variant_names();
    let points = cfg.points();
    let mut variants: Vec<VariantOutput> = names
        .iter()
        .map(|n| VariantOutput {
            name: n.clone(),
            raw: Vec::new(),
            aggregate: Vec::new(),
        })
        .collect();
    let mut failures = Vec::new();
    let mut violations = 0;
    for (job, result) in jobs.iter().zip(results) {
        let value = format_value(points[job.point]);
        match result {
            Ok(res) => {
                violations += res.constraints.total_violations();
                let hash = config_hash(&job.config);
                let c = &job.config;
                variants[job.variant]
                    .raw
                    .extend(res.users.iter().map(|m| RawRow {
                        sweep_value: value.clone(),
                        replication: job.replication,
                        user: m.user,
                        config_hash: hash.clone(),
                        seed: c.seed,
                        n: c.users,
                        model: c.model.name().into(),
                        scheduler: c.scheduler.name().into(),
                        selector: c.selector.name().into(),
                        mean_q: m.mean_quality,
                        std_q: m.quality_std,
                        objective: m.objective,
                        rebuf_frac: m.rebuffer_fraction,
                        rebuf_s: m.rebuffer_seconds,
                        startup_s: m.startup_delay_s,
                        losses: m.segment_losses,
                        wasted_bits: m.wasted_bits,
                    }));
            }
            Err(e) => failures.push((names[job.variant].clone(), value, job.replication, e)),
        }
    }
    for v in &mut variants {
        v.aggregate = points
            .iter()
            .map(|&p| format_value(p))
            .filter_map(|p| {
                let rows: Vec<&RawRow> = v.raw.iter().filter(|r| r.sweep_value == p).collect();
                aggregate_rows(&p, &rows)
            })
            .collect();
    }
    ExperimentOutput {
        variants,
        failures,
        violations,
    }
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Summary of one sweep point's raw rows; `None` when there are none.
pub fn aggregate_rows(sweep_value: &str, rows: &[&RawRow]) -> Option<AggregateRow> {
    if rows.is_empty() {
        return None;
    }
    let mut sessions: Vec<usize> = rows.iter().map(|r| r.replication).collect();
    sessions.dedup();
    let col = |f: fn(&RawRow) -> f64| mean_std(rows.iter().map(move |r| f(r)));
    let (objective_mean, objective_std) = col(|r| r.objective);
    let (mean_q_mean, mean_q_std) = col(|r| r.mean_q);
    let (rebuf_s_mean, rebuf_s_std) = col(|r| r.rebuf_s);
    let (rebuf_frac_mean, rebuf_frac_std) = col(|r| r.rebuf_frac);
    let (losses_mean, losses_std) = col(|r| r.losses as f64);
    Some(AggregateRow {
        sweep_value: sweep_value.to_string(),
        sessions: sessions.len(),
        rows: rows.len(),
        objective_mean,
        objective_std,
        mean_q_mean,
        mean_q_std,
        rebuf_s_mean,
        rebuf_s_std,
        rebuf_frac_mean,
        rebuf_frac_std,
        losses_mean,
        losses_std,
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if rows.is_empty() {
        w.write_record(header).map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

pub const RAW_HEADER: &[&str] = &[
    "sweep_value",
    "replication",
    "user",
    "config_hash",
    "seed",
    "n",
    "model",
    "scheduler",
    "selector",
    "mean_q",
    "std_q",
    "objective",
    "rebuf_frac",
    "rebuf_s",
    "startup_s",
    "losses",
    "wasted_bits",
];

pub const AGGREGATE_HEADER: &[&str] = &[
    "sweep_value",
    "sessions",
    "rows",
    "objective_mean",
    "objective_std",
    "mean_q_mean",
    "mean_q_std",
    "rebuf_s_mean",
    "rebuf_s_std",
    "rebuf_frac_mean",
    "rebuf_frac_std",
    "losses_mean",
    "losses_std",
];

/// Writes `<variant>.raw.csv` and `<variant>.agg.csv` into `dir`; returns
/// the paths written.
pub fn write(out: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for v in &out.variants {
        let raw = dir.join(format!("{}.raw.csv", v.name));
        write_csv(&raw, &v.raw, RAW_HEADER)?;
        let agg = dir.join(format!("{}.agg.csv", v.name));
        write_csv(&agg, &v.aggregate, AGGREGATE_HEADER)?;
        paths.push(raw);
        paths.push(agg);
    }
    Ok(paths)
}

pub fn read_raw(path: &Path) -> Result<Vec<RawRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}
