//! Command-line front end. Exit codes: 0 success, 1 usage or input error,
//! 2 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use tamd_core::em::{em_fit_paired, EmConfig};
use tamd_core::model_json::{to_string_full_precision, write_model};
use tamd_core::simgen::{
    generate, generate_on_stream, init_random, read_csv, stream_rng, streams, write_csv, DgpKind, DgpSpec,
    InitScheme, LabeledSample,
};
use tamd_core::tamd::fit;

use crate::builtin::Builtin;
use crate::error::{HarnessError, Result};
use crate::gradcheck;
use crate::runner::{first_error, run_experiment, RunRecord};
use crate::spec::{ExperimentSpec, FitSettings, InitChoice};
use crate::summary::summarize;

#[derive(Debug, Parser)]
#[command(name = "tamd", version, about = "Penalized Gaussian mixture fitting and benchmarks")]
struct Cli {
    /// Seed for data, initialization and Monte Carlo draws.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Spec or settings file in `key = value` form.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Suppress progress and summaries.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FitMethod {
    Tamd,
    Em,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    WellSpecified,
    IllConditioned,
    Contaminated,
    HighDim,
}

impl From<KindArg> for DgpKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::WellSpecified => DgpKind::WellSpecified,
            KindArg::IllConditioned => DgpKind::IllConditioned,
            KindArg::Contaminated => DgpKind::Contaminated,
            KindArg::HighDim => DgpKind::HighDim,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a mixture to a data CSV (`x1..xd[,label]`) and emit model JSON.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Number of components (overrides `k` in --config).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum, default_value = "tamd")]
        method: FitMethod,
        /// Fixed λ_n instead of √(log n / n).
        #[arg(long)]
        lambda_n: Option<f64>,
    },
    /// Draw a synthetic sample and write it as CSV with its true model.
    Simulate {
        #[arg(long, value_enum, default_value = "well-specified")]
        kind: KindArg,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 2.0)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        /// Also write a clean held-out sample of this size.
        #[arg(long)]
        heldout: Option<usize>,
    },
    /// Run an experiment spec and write results and a summary.
    Benchmark {
        /// Spec file (or use --config).
        spec: Option<PathBuf>,
    },
    /// Finite-difference check of the penalty gradient on random configurations.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        configs: usize,
    },
    /// Run a built-in desk-scale experiment.
    Reproduce {
        #[arg(value_enum)]
        which: Builtin,
        /// Use the full-size parameters instead of the desk-scale ones.
        #[arg(long)]
        full: bool,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(format!("reading {}", path.display()), e))
}

fn reject_config(cli: &Cli, command: &str) -> Result<()> {
    if cli.config.is_some() {
        return Err(HarnessError::Usage(format!("--config is not used by `{command}`")));
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Fit {
            data,
            k,
            method,
            lambda_n,
        } => cmd_fit(cli, data, *k, *method, *lambda_n),
        Command::Simulate {
            kind,
            n,
            d,
            k,
            delta,
            kappa,
            eps,
            heldout,
        } => {
            reject_config(cli, "simulate")?;
            let spec = DgpSpec {
                kind: (*kind).into(),
                n: *n,
                d: *d,
                k_true: *k,
                separation_delta: *delta,
                condition_kappa: *kappa,
                contamination_eps: *eps,
                seed: cli.seed.unwrap_or(0),
            };
            spec.validate()?;
            cmd_simulate(cli, &spec, *heldout)
        }
        Command::Benchmark { spec } => {
            let path = match (spec, &cli.config) {
                (Some(p), None) | (None, Some(p)) => p,
                (Some(_), Some(_)) => {
                    return Err(HarnessError::Usage("give the spec either positionally or via --config".into()))
                }
                (None, None) => return Err(HarnessError::Usage("benchmark needs a spec file".into())),
            };
            let spec = ExperimentSpec::parse(&read_text(path)?)?;
            cmd_sweep(cli, spec)
        }
        Command::Gradcheck { configs } => {
            reject_config(cli, "gradcheck")?;
            if *configs == 0 {
                return Err(HarnessError::Usage("--configs must be >= 1".into()));
            }
            let report = gradcheck::sweep(cli.seed.unwrap_or(0), *configs)?;
            if let Some(dir) = &cli.out {
                create_dir(dir)?;
                let path = dir.join("gradcheck.json");
                let text = serde_json::to_string_pretty(&report)?;
                fs::write(&path, text + "\n").map_err(|e| HarnessError::io(format!("writing {}", path.display()), e))?;
            }
            println!(
                "gradcheck: {} configurations, max relative error {:.3e} (threshold {:.0e}) {}",
                report.cases.len(),
                report.max_rel_error,
                gradcheck::PASS_THRESHOLD,
                if report.passed { "PASS" } else { "FAIL" }
            );
            Ok(if report.passed { 0 } else { 2 })
        }
        Command::Reproduce { which, full } => {
            reject_config(cli, "reproduce")?;
            cmd_sweep(cli, which.spec(*full)?)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(format!("creating {}", dir.display()), e))
}

fn cmd_fit(cli: &Cli, data_path: &Path, k: Option<usize>, method: FitMethod, lambda_n: Option<f64>) -> Result<i32> {
    let settings = match &cli.config {
        Some(p) => FitSettings::parse(&read_text(p)?)?,
        None => FitSettings::parse("")?,
    };
    let k = k
        .or(settings.k)
        .ok_or_else(|| HarnessError::Usage("fit needs --k or `k = ...` in --config".into()))?;
    let file = fs::File::open(data_path).map_err(|e| HarnessError::io(format!("opening {}", data_path.display()), e))?;
    let (data, _) = read_csv(file)?;
    let seed = cli.seed.unwrap_or(0);
    let scheme = match settings.init {
        InitChoice::RandomPoints => InitScheme::RandomPoints,
        _ => InitScheme::KmeansppLike,
    };
    let init = init_random(&data, k, &scheme, &mut stream_rng(seed, streams::INIT))?;
    let result = match method {
        FitMethod::Tamd => {
            let mut fitter = settings.fitter;
            if let Some(v) = lambda_n {
                fitter.lambda_n = crate::spec::LambdaChoice::Fixed(v);
            }
            fit(&data, &init, &fitter.resolve(data.nrows())?)?
        }
        FitMethod::Em => em_fit_paired(&data, &init, &EmConfig::default(), &mut stream_rng(seed, streams::RESTARTS))?,
    };
    match &cli.out {
        Some(dir) => {
            create_dir(dir)?;
            let path = dir.join("model.json");
            let f = fs::File::create(&path).map_err(|e| HarnessError::io(format!("creating {}", path.display()), e))?;
            write_model(&result.params, f)?;
        }
        None => write_model(&result.params, std::io::stdout().lock())?,
    }
    if !cli.quiet {
        eprintln!(
            "fit: n={} d={} k={} iterations={} converged={} degenerate={} objective={:.10e} backtracks={}",
            data.nrows(),
            data.ncols(),
            k,
            result.iterations,
            result.converged,
            result.degenerate,
            result.final_objective(),
            result.backtrack_events
        );
    }
    Ok(0)
}

fn write_sample(sample: &LabeledSample, path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| HarnessError::io(format!("creating {}", path.display()), e))?;
    write_csv(sample, f)?;
    Ok(())
}

fn cmd_simulate(cli: &Cli, spec: &DgpSpec, heldout: Option<usize>) -> Result<i32> {
    let sample = generate(spec)?;
    match &cli.out {
        Some(dir) => {
            create_dir(dir)?;
            write_sample(&sample, &dir.join("data.csv"))?;
            let truth = to_string_full_precision(&tamd_core::model_json::ModelJson::from(&sample.truth))?;
            let path = dir.join("truth.json");
            fs::write(&path, truth + "\n").map_err(|e| HarnessError::io(format!("writing {}", path.display()), e))?;
            if let Some(m) = heldout {
                let mut clean = spec.clone();
                clean.n = m;
                clean.contamination_eps = 0.0;
                write_sample(&generate_on_stream(&clean, streams::HELDOUT)?, &dir.join("heldout.csv"))?;
            }
            if !cli.quiet {
                eprintln!("simulate: wrote {} rows to {}", spec.n, dir.display());
            }
        }
        None => {
            if heldout.is_some() {
                return Err(HarnessError::Usage("--heldout needs --out".into()));
            }
            write_csv(&sample, std::io::stdout().lock())?;
        }
    }
    Ok(0)
}

fn print_summary(records: &[RunRecord]) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "{:<16} {:>6} {:>4} {:>3} {:>6} {:>6} {:>6} {:<5} {:>9} {:>10} {:>10} {:>9} {:>10}",
        "dgp", "n", "d", "k", "delta", "kappa", "eps", "meth", "success", "mean_mse", "cov_err", "hellinger", "heldout_ll"
    );
    for row in summarize(records) {
        let c = row.cell;
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>4} {:>3} {:>6} {:>6} {:>6} {:<5} {:>9.3} {:>10.4} {:>10.4} {:>9.4} {:>10.4}",
            c.dgp.as_str(),
            c.n,
            c.d,
            c.k,
            c.delta,
            c.kappa,
            c.eps,
            row.method.as_str(),
            row.stat("success").mean,
            row.stat("mean_mse").mean,
            row.stat("cov_frobenius_error").mean,
            row.stat("hellinger_to_truth").mean,
            row.stat("heldout_loglik").mean,
        );
    }
}

fn cmd_sweep(cli: &Cli, mut spec: ExperimentSpec) -> Result<i32> {
    if let Some(seed) = cli.seed {
        spec.base_seed = seed;
    }
    if let Some(out) = &cli.out {
        spec.output_dir = out.clone();
    }
    let cells = spec.cells()?.len();
    if !cli.quiet {
        eprintln!(
            "{}: {} cells x {} replications x {} methods -> {}",
            spec.name,
            cells,
            spec.replications,
            spec.methods.len(),
            spec.output_dir.display()
        );
    }
    let records = run_experiment(&spec, cli.threads)?;
    if !cli.quiet {
        print_summary(&records);
    }
    if let Some(err) = first_error(&records) {
        let count = records.iter().filter(|r| r.error.is_some()).count();
        eprintln!("{count} run(s) failed; first error: {err}");
        return Ok(2);
    }
    Ok(0)
}
