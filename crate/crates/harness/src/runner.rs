//! Replication sweeps: data, paired initialization, fits, scoring, output.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use tamd_core::affinity::separation;
use tamd_core::em::em_fit_paired;
use tamd_core::metrics::{evaluate, EvalData, MetricsReport};
use tamd_core::simgen::{generate, generate_on_stream, init_random, stream_rng, streams, InitScheme, LabeledSample};
use tamd_core::tamd::fit;
use tamd_core::{FitResult, MixtureParams};

use crate::error::{HarnessError, Result};
use crate::spec::{CellId, ExperimentSpec, InitChoice, Method};
use crate::summary::{summarize, write_summary_csv};

/// One fitted model, scored.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    #[serde(flatten)]
    pub cell: CellId,
    pub method: Method,
    pub replication: usize,
    pub seed: u64,
    pub success: bool,
    pub mean_mse: f64,
    pub cov_frobenius_error: f64,
    pub hellinger_to_truth: f64,
    pub hellinger_se: f64,
    pub ari: f64,
    pub accuracy: f64,
    pub heldout_loglik: f64,
    pub final_objective: f64,
    pub iterations: usize,
    pub backtracks: usize,
    pub gradient_evals: usize,
    pub converged: bool,
    pub degenerate: bool,
    /// Hellinger-based separation `Δ` of the generating mixture.
    pub truth_separation: f64,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

impl RunRecord {
    fn failed(cell: CellId, method: Method, replication: usize, seed: u64, truth_separation: f64, err: &dyn std::fmt::Display) -> Self {
        Self {
            cell,
            method,
            replication,
            seed,
            success: false,
            mean_mse: f64::NAN,
            cov_frobenius_error: f64::NAN,
            hellinger_to_truth: f64::NAN,
            hellinger_se: f64::NAN,
            ari: f64::NAN,
            accuracy: f64::NAN,
            heldout_loglik: f64::NAN,
            final_objective: f64::NAN,
            iterations: 0,
            backtracks: 0,
            gradient_evals: 0,
            converged: false,
            degenerate: false,
            truth_separation,
            wall_time_s: 0.0,
            error: Some(err.to_string()),
        }
    }

    fn from_fit(
        cell: CellId,
        method: Method,
        replication: usize,
        seed: u64,
        truth_separation: f64,
        fit: &FitResult,
        metrics: MetricsReport,
    ) -> Self {
        Self {
            cell,
            method,
            replication,
            seed,
            success: metrics.success,
            mean_mse: metrics.mean_mse,
            cov_frobenius_error: metrics.cov_frobenius_error,
            hellinger_to_truth: metrics.hellinger_to_truth,
            hellinger_se: metrics.hellinger_se,
            ari: metrics.ari,
            accuracy: metrics.accuracy,
            heldout_loglik: metrics.heldout_loglik,
            final_objective: fit.final_objective(),
            iterations: fit.iterations,
            backtracks: fit.backtrack_events,
            gradient_evals: fit.gradient_evals,
            converged: fit.converged,
            degenerate: fit.degenerate,
            truth_separation,
            wall_time_s: fit.wall_time,
            error: None,
        }
    }
}

/// Data and initialization shared by every method in one replication.
pub struct Replicate {
    pub train: LabeledSample,
    pub heldout: DMatrix<f64>,
    pub init: MixtureParams,
}

/// Builds the replicate for `(cell, seed)`. Held-out points come from the
/// clean mixture, so contaminated cells are scored on the target density.
pub fn replicate(spec: &ExperimentSpec, cell: &CellId, seed: u64) -> tamd_core::Result<Replicate> {
    let dgp = cell.dgp_spec(seed);
    let train = generate(&dgp)?;
    let mut clean = dgp.clone();
    clean.n = spec.heldout_n;
    clean.contamination_eps = 0.0;
    let heldout = generate_on_stream(&clean, streams::HELDOUT)?.data;
    let scheme = match spec.init {
        InitChoice::KmeansppLike => InitScheme::KmeansppLike,
        InitChoice::RandomPoints => InitScheme::RandomPoints,
        InitChoice::PerturbedTruth { noise } => InitScheme::PerturbedTruth {
            truth: train.truth.clone(),
            noise,
        },
    };
    let init = init_random(&train.data, cell.k, &scheme, &mut stream_rng(seed, streams::INIT))?;
    Ok(Replicate { train, heldout, init })
}

fn fit_one(spec: &ExperimentSpec, method: Method, rep: &Replicate, seed: u64) -> tamd_core::Result<FitResult> {
    let data = &rep.train.data;
    match method {
        Method::Tamd => fit(data, &rep.init, &spec.fitter.resolve(data.nrows())?),
        Method::Em => em_fit_paired(data, &rep.init, &spec.em, &mut stream_rng(seed, streams::RESTARTS)),
    }
}

fn score(spec: &ExperimentSpec, rep: &Replicate, est: &MixtureParams, seed: u64) -> tamd_core::Result<MetricsReport> {
    let eval = EvalData {
        train: &rep.train.data,
        train_labels: &rep.train.labels,
        heldout: &rep.heldout,
        hellinger_draws: spec.hellinger_draws,
    };
    // same stream for every method: Monte Carlo noise is paired too
    evaluate(est, &rep.train.truth, &eval, &mut stream_rng(seed, streams::METRICS))
}

/// All records of one `(cell, replication)`, one per method in spec order.
pub fn run_replication(spec: &ExperimentSpec, cell: &CellId, replication: usize) -> Vec<RunRecord> {
    let seed = cell.seed(spec.base_seed, replication);
    let rep = match replicate(spec, cell, seed) {
        Ok(r) => r,
        Err(e) => {
            return spec
                .methods
                .iter()
                .map(|&m| RunRecord::failed(*cell, m, replication, seed, f64::NAN, &e))
                .collect()
        }
    };
    let truth_sep = separation(&rep.train.truth).unwrap_or(f64::NAN);
    spec.methods
        .iter()
        .map(|&method| {
            let started = Instant::now();
            let outcome = fit_one(spec, method, &rep, seed).and_then(|f| {
                let m = score(spec, &rep, &f.params, seed)?;
                Ok((f, m))
            });
            match outcome {
                Ok((f, m)) => RunRecord::from_fit(*cell, method, replication, seed, truth_sep, &f, m),
                Err(e) => {
                    let mut r = RunRecord::failed(*cell, method, replication, seed, truth_sep, &e);
                    r.wall_time_s = started.elapsed().as_secs_f64();
                    r
                }
            }
        })
        .collect()
}

/// Runs every cell × replication × method on a pool of `threads` workers
/// (`0` = one per core). Results come back in grid order regardless of the
/// pool width.
pub fn execute(spec: &ExperimentSpec, threads: usize) -> Result<Vec<RunRecord>> {
    let cells = spec.cells()?;
    let tasks: Vec<(CellId, usize)> = cells
        .iter()
        .flat_map(|c| (0..spec.replications).map(move |r| (*c, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Usage(format!("cannot build thread pool: {e}")))?;
    let per_task: Vec<Vec<RunRecord>> =
        pool.install(|| tasks.par_iter().map(|(c, r)| run_replication(spec, c, *r)).collect());
    Ok(per_task.into_iter().flatten().collect())
}

pub const RESULTS_HEADER: [&str; 21] = [
    "dgp",
    "n",
    "d",
    "k",
    "delta",
    "kappa",
    "eps",
    "method",
    "replication",
    "seed",
    "success",
    "mean_mse",
    "cov_frobenius_error",
    "hellinger_to_truth",
    "ari",
    "heldout_loglik",
    "final_objective",
    "iterations",
    "backtracks",
    "wall_time_s",
    "error",
];

/// Shortest round-trip decimal; exponent form outside `[1e-5, 1e16)`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn cell_fields(c: &CellId) -> Vec<String> {
    vec![
        c.dgp.to_string(),
        c.n.to_string(),
        c.d.to_string(),
        c.k.to_string(),
        fmt_f64(c.delta),
        fmt_f64(c.kappa),
        fmt_f64(c.eps),
    ]
}

pub fn write_results_csv<W: Write>(records: &[RunRecord], record_wall_time: bool, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RESULTS_HEADER)?;
    for r in records {
        let mut row = cell_fields(&r.cell);
        row.extend([
            r.method.as_str().to_string(),
            r.replication.to_string(),
            r.seed.to_string(),
            r.success.to_string(),
            fmt_f64(r.mean_mse),
            fmt_f64(r.cov_frobenius_error),
            fmt_f64(r.hellinger_to_truth),
            fmt_f64(r.ari),
            fmt_f64(r.heldout_loglik),
            fmt_f64(r.final_objective),
            r.iterations.to_string(),
            r.backtracks.to_string(),
            if record_wall_time { fmt_f64(r.wall_time_s) } else { String::new() },
            r.error.clone().unwrap_or_default(),
        ]);
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| HarnessError::io("writing results", e))?;
    Ok(())
}

fn write_timings_csv<W: Write>(records: &[RunRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "dgp", "n", "d", "k", "delta", "kappa", "eps", "method", "replication", "wall_time_s", "iterations",
        "gradient_evals", "backtracks",
    ])?;
    for r in records {
        let mut row = cell_fields(&r.cell);
        row.extend([
            r.method.as_str().to_string(),
            r.replication.to_string(),
            fmt_f64(r.wall_time_s),
            r.iterations.to_string(),
            r.gradient_evals.to_string(),
            r.backtracks.to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| HarnessError::io("writing timings", e))?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'a str,
    software: &'static str,
    version: &'static str,
    cells: usize,
    replications: usize,
    methods: Vec<&'static str>,
    resolved_spec: String,
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| HarnessError::io(format!("creating {}", path.display()), e))
}

/// Writes `results.csv`, `results.json`, `summary.csv`, `timings.csv` and
/// `manifest.json` into `dir`.
pub fn write_outputs(spec: &ExperimentSpec, records: &[RunRecord], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(format!("creating {}", dir.display()), e))?;
    write_results_csv(records, spec.record_wall_time, create(&dir.join("results.csv"))?)?;

    let json_records: Vec<RunRecord> = records
        .iter()
        .cloned()
        .map(|mut r| {
            if !spec.record_wall_time {
                r.wall_time_s = f64::NAN;
            }
            r
        })
        .collect();
    let mut f = create(&dir.join("results.json"))?;
    serde_json::to_writer_pretty(&mut f, &json_records)?;
    f.write_all(b"\n").map_err(|e| HarnessError::io("writing results.json", e))?;

    write_summary_csv(&summarize(records), spec.record_wall_time, create(&dir.join("summary.csv"))?)?;
    write_timings_csv(records, create(&dir.join("timings.csv"))?)?;

    let manifest = Manifest {
        name: &spec.name,
        software: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        cells: spec.cells()?.len(),
        replications: spec.replications,
        methods: spec.methods.iter().map(|m| m.as_str()).collect(),
        resolved_spec: spec.to_text(),
    };
    let mut f = create(&dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n").map_err(|e| HarnessError::io("writing manifest.json", e))?;
    Ok(())
}

/// [`execute`] followed by [`write_outputs`] into `spec.output_dir`.
pub fn run_experiment(spec: &ExperimentSpec, threads: usize) -> Result<Vec<RunRecord>> {
    let records = execute(spec, threads)?;
    write_outputs(spec, &records, &spec.output_dir)?;
    Ok(records)
}

/// Numerical failures recorded in a sweep, if any.
pub fn first_error(records: &[RunRecord]) -> Option<&str> {
    records.iter().find_map(|r| r.error.as_deref())
}
