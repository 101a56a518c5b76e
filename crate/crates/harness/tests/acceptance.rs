//! Acceptance run: every criterion at its stated tolerance, one line each.
//!
//! Runs without the libtest harness so the verdict lines always reach stdout.
//! The process fails when a criterion fails, unless that criterion is listed
//! in `KNOWN_FAILURES` with the analysis of why it does not pass; those still
//! print FAIL.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use tamd_core::affinity::{hellinger_affinity, penalty};
use tamd_core::em::{em_fit, EmConfig};
use tamd_core::gaussmath::{cholesky_exact, GaussianComponent, SpdMatrix};
use tamd_core::simgen::{generate, init_random, stream_rng, streams, DgpSpec, InitScheme};
use tamd_core::tamd::{fit_observed, FitterConfig};
use tamd_core::{MixtureParams, PenaltyConfig, TamdError};
use tamd_harness::builtin::Builtin;
use tamd_harness::gradcheck;
use tamd_harness::{execute, ExperimentSpec, Method, RunRecord};

/// Criteria that fail for the reasons given; reported, not fatal. A criterion
/// listed here that starts passing is reported as PASS.
const KNOWN_FAILURES: &[(u32, &str)] = &[
    (
        5,
        "the EM baseline does not degenerate at this scale: every run keeps min det above 1e-6, so there is no gap to win",
    ),
    (
        8,
        "in binary64 one pair barrier -log(1 - A) stops near 34.5 at the 1 - 1e-15 affinity clamp (and could not pass ~745 even unclamped); \
         -log(pi) at the smallest subnormal weight is ~744.4, so two of the three paths cannot reach 1e3",
    ),
    (
        10,
        "not reproduced: with the default schedule the penalized fit loses more held-out likelihood under contamination than EM in every paired replication",
    ),
];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn spd(dense: DMatrix<f64>) -> SpdMatrix {
    cholesky_exact(&dense, 0.0).expect("test matrix is SPD")
}

fn comp(mean: &[f64], cov: &[f64]) -> GaussianComponent {
    let d = mean.len();
    GaussianComponent::new(DVector::from_column_slice(mean), spd(DMatrix::from_row_slice(d, d, cov))).unwrap()
}

// ---------------------------------------------------------------- 1

fn gradient_oracle() -> Verdict {
    let t = Instant::now();
    let report = gradcheck::sweep(0, 100).expect("gradcheck sweep runs");
    let elapsed = t.elapsed();
    let dims: Vec<usize> = report.cases.iter().map(|c| c.d).collect();
    let ks: Vec<usize> = report.cases.iter().map(|c| c.k).collect();
    let covered = [1, 2, 3, 5].iter().all(|d| dims.contains(d)) && [2, 3, 4].iter().all(|k| ks.contains(k));
    let pass = report.cases.len() == 100 && report.max_rel_error < 1e-5 && covered && within(elapsed, 30.0);
    verdict(
        pass,
        format!(
            "{} configs, max relative error {:.3e} (< 1e-5), {:.1}s (< 30s)",
            report.cases.len(),
            report.max_rel_error,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn density_1d(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

fn density_2d(x: f64, y: f64, mean: [f64; 2], cov: [f64; 3]) -> f64 {
    let [a, b, c] = cov;
    let det = a * c - b * b;
    let (dx, dy) = (x - mean[0], y - mean[1]);
    let q = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
    (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
}

fn trapezoid_weight(i: usize, m: usize) -> f64 {
    if i == 0 || i == m {
        0.5
    } else {
        1.0
    }
}

fn quad_1d(ma: f64, va: f64, mb: f64, vb: f64) -> f64 {
    let half = 12.0 * va.max(vb).sqrt();
    let (lo, hi) = (ma.min(mb) - half, ma.max(mb) + half);
    let m = 4000;
    let h = (hi - lo) / m as f64;
    (0..=m)
        .map(|i| {
            let x = lo + h * i as f64;
            trapezoid_weight(i, m) * (density_1d(x, ma, va) * density_1d(x, mb, vb)).sqrt()
        })
        .sum::<f64>()
        * h
}

fn quad_2d(ma: [f64; 2], ca: [f64; 3], mb: [f64; 2], cb: [f64; 3]) -> f64 {
    let half = 12.0 * (ca[0] + ca[2]).max(cb[0] + cb[2]).sqrt();
    let m = 400;
    let axis = |c: usize| {
        let lo = ma[c].min(mb[c]) - half;
        let hi = ma[c].max(mb[c]) + half;
        (lo, (hi - lo) / m as f64)
    };
    let ((x0, hx), (y0, hy)) = (axis(0), axis(1));
    let mut total = 0.0;
    for i in 0..=m {
        let x = x0 + hx * i as f64;
        let wi = trapezoid_weight(i, m);
        for j in 0..=m {
            let y = y0 + hy * j as f64;
            total += wi * trapezoid_weight(j, m) * (density_2d(x, y, ma, ca) * density_2d(x, y, mb, cb)).sqrt();
        }
    }
    total * hx * hy
}

fn random_cov_2d<R: Rng>(rng: &mut R) -> [f64; 3] {
    let a: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    [
        a[0] * a[0] + a[1] * a[1] + 0.3,
        a[0] * a[2] + a[1] * a[3],
        a[2] * a[2] + a[3] * a[3] + 0.3,
    ]
}

fn affinity_quadrature() -> Verdict {
    let t = Instant::now();
    let mut rng = stream_rng(2024, 0);
    let mut worst: f64 = 0.0;

    let mut cases_1d: Vec<(f64, f64, f64, f64)> = vec![(0.0, 1.0, 0.0, 4.0), (0.7, 1.3, 0.7, 1.3)];
    while cases_1d.len() < 20 {
        cases_1d.push((
            rng.random_range(-3.0..3.0),
            rng.random_range(0.2..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(0.2..3.0),
        ));
    }
    for &(ma, va, mb, vb) in &cases_1d {
        let closed = hellinger_affinity(&comp(&[ma], &[va]), &comp(&[mb], &[vb])).unwrap();
        worst = worst.max((closed - quad_1d(ma, va, mb, vb)).abs());
    }

    let mut cases_2d: Vec<([f64; 2], [f64; 3], [f64; 2], [f64; 3])> =
        vec![([0.0, 0.0], [1.0, 0.0, 1.0], [2.0, 0.0], [1.0, 0.0, 1.0])];
    while cases_2d.len() < 10 {
        let ma = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let mb = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        cases_2d.push((ma, random_cov_2d(&mut rng), mb, random_cov_2d(&mut rng)));
    }
    for (ma, ca, mb, cb) in &cases_2d {
        let cov = |c: &[f64; 3]| [c[0], c[1], c[1], c[2]];
        let closed = hellinger_affinity(&comp(ma, &cov(ca)), &comp(mb, &cov(cb))).unwrap();
        worst = worst.max((closed - quad_2d(*ma, *ca, *mb, *cb)).abs());
    }

    // the worked values themselves
    let worked = [
        (
            hellinger_affinity(&comp(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]), &comp(&[2.0, 0.0], &[1.0, 0.0, 0.0, 1.0]))
                .unwrap(),
            (-0.5f64).exp(),
        ),
        (hellinger_affinity(&comp(&[0.0], &[1.0]), &comp(&[0.0], &[4.0])).unwrap(), 2f64.sqrt() / 2.5f64.sqrt()),
        (hellinger_affinity(&comp(&[0.7], &[1.3]), &comp(&[0.7], &[1.3])).unwrap(), 1.0),
    ];
    let worked_err = worked.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let elapsed = t.elapsed();
    verdict(
        worst < 1e-6 && worked_err < 1e-12 && within(elapsed, 60.0),
        format!(
            "{} cases in d=1, {} in d=2, max |closed - quadrature| {:.2e} (< 1e-6), worked examples off by {:.1e}, {:.1}s (< 60s)",
            cases_1d.len(),
            cases_2d.len(),
            worst,
            worked_err,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 3 and 6

struct AscentStats {
    fits: usize,
    errors: Vec<String>,
    violations: usize,
    worst_drop: f64,
    backtracks: usize,
    floor_checks: usize,
    floor_violations: usize,
    closest_to_floor: f64,
}

fn ascent_fits() -> AscentStats {
    let mut s = AscentStats {
        fits: 50,
        errors: Vec::new(),
        violations: 0,
        worst_drop: 0.0,
        backtracks: 0,
        floor_checks: 0,
        floor_violations: 0,
        closest_to_floor: f64::INFINITY,
    };
    for seed in 0..50u64 {
        let delta = [1.0, 2.0, 3.0][seed as usize % 3];
        let sample = generate(&DgpSpec::well_specified(300, 2, 3, delta, 1000 + seed)).unwrap();
        let init = init_random(&sample.data, 3, &InitScheme::KmeansppLike, &mut stream_rng(1000 + seed, streams::INIT))
            .unwrap();
        let cfg = FitterConfig::for_sample_size(300).unwrap();
        let c = cfg.penalty.lambda_n * cfg.penalty.lambda_wt;
        let floor = c / (1.0 + 3.0 * c);
        let outcome = fit_observed(&sample.data, &init, &cfg, |_, theta, _| {
            let min = theta.weights().iter().copied().fold(f64::INFINITY, f64::min);
            s.floor_checks += 1;
            if !(min >= floor) {
                s.floor_violations += 1;
            }
            s.closest_to_floor = s.closest_to_floor.min(min - floor);
        });
        match outcome {
            Ok(result) => {
                s.backtracks += result.backtrack_events;
                for w in result.objective_trace.windows(2) {
                    let drop = w[0] - w[1];
                    s.worst_drop = s.worst_drop.max(drop);
                    if drop > 1e-10 {
                        s.violations += 1;
                    }
                }
            }
            Err(e) => s.errors.push(format!("seed {seed}: {e}")),
        }
    }
    s
}

fn monotone_ascent(s: &AscentStats) -> Verdict {
    verdict(
        s.errors.is_empty() && s.violations == 0,
        format!(
            "{} fits, {} errors, {} trace decreases beyond 1e-10 (largest drop {:.1e}), {} backtracking events",
            s.fits,
            s.errors.len(),
            s.violations,
            s.worst_drop,
            s.backtracks
        ),
    )
}

fn weight_floor(s: &AscentStats) -> Verdict {
    verdict(
        s.errors.is_empty() && s.floor_checks > 0 && s.floor_violations == 0,
        format!(
            "{} iterates checked, {} below the floor, smallest margin {:.3e}",
            s.floor_checks, s.floor_violations, s.closest_to_floor
        ),
    )
}

// ---------------------------------------------------------------- 4

/// Textbook EM step with dense inverses and the same `1e-12` ridge.
fn textbook_em_step(x: &DMatrix<f64>, weights: &[f64], means: &[DVector<f64>], covs: &[DMatrix<f64>]) -> (Vec<f64>, Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
    let (n, d) = (x.nrows(), x.ncols());
    let k = weights.len();
    let mut resp = DMatrix::zeros(n, k);
    for i in 0..n {
        let xi = x.row(i).transpose();
        let logs: Vec<f64> = (0..k)
            .map(|j| {
                let inv = covs[j].clone().try_inverse().unwrap();
                let diff = &xi - &means[j];
                let q = (diff.transpose() * inv * &diff)[0];
                weights[j].ln()
                    - 0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + covs[j].determinant().ln() + q)
            })
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logs.iter().map(|l| (l - top).exp()).sum();
        for j in 0..k {
            resp[(i, j)] = (logs[j] - top).exp() / total;
        }
    }
    let mut new_w = Vec::new();
    let mut new_m = Vec::new();
    let mut new_c = Vec::new();
    for j in 0..k {
        let mass: f64 = resp.column(j).sum();
        let mut mean = DVector::zeros(d);
        for i in 0..n {
            mean += x.row(i).transpose() * resp[(i, j)];
        }
        mean /= mass;
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..n {
            let diff = x.row(i).transpose() - &mean;
            cov += &diff * diff.transpose() * resp[(i, j)];
        }
        cov /= mass;
        cov += DMatrix::identity(d, d) * 1e-12;
        new_w.push(mass / n as f64);
        new_m.push(mean);
        new_c.push(cov);
    }
    (new_w, new_m, new_c)
}

fn param_gap(theta: &MixtureParams, w: &[f64], m: &[DVector<f64>], c: &[DMatrix<f64>]) -> f64 {
    let mut gap: f64 = 0.0;
    for k in 0..theta.k() {
        gap = gap.max((theta.weights()[k] - w[k]).abs());
        gap = gap.max((&theta.component(k).mean - &m[k]).amax());
        gap = gap.max((theta.component(k).covariance.to_dense() - &c[k]).amax());
    }
    gap
}

fn em_reduction() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut worst_em: f64 = 0.0;
    let mut errors = 0;
    for seed in 0..10u64 {
        let sample = generate(&DgpSpec::well_specified(200, 2, 3, 2.0, 500 + seed)).unwrap();
        let init = init_random(&sample.data, 3, &InitScheme::KmeansppLike, &mut stream_rng(500 + seed, streams::INIT))
            .unwrap();
        let mut cfg = FitterConfig::default();
        cfg.max_iters = 10;
        cfg.convergence_tol = 0.0;
        cfg.penalty.lambda_n = 0.0;
        cfg.penalty.lambda_sc = 0.0;
        cfg.penalty.jitter = 1e-12;

        let mut w = init.weights().to_vec();
        let mut m: Vec<DVector<f64>> = init.components().iter().map(|c| c.mean.clone()).collect();
        let mut c: Vec<DMatrix<f64>> = init.components().iter().map(|c| c.covariance.to_dense()).collect();
        let mut steps = 0;
        let outcome = fit_observed(&sample.data, &init, &cfg, |_, theta, _| {
            (w, m, c) = textbook_em_step(&sample.data, &w, &m, &c);
            worst = worst.max(param_gap(theta, &w, &m, &c));
            steps += 1;
        });
        let em_cfg = EmConfig {
            max_iters: 10,
            convergence_tol: 0.0,
            ..EmConfig::default()
        };
        match (outcome, em_fit(&sample.data, &init, &em_cfg)) {
            (Ok(tamd), Ok(em)) if steps == 10 => {
                let (ew, ec) = (em.params.weights().to_vec(), em.params.components());
                let em_m: Vec<_> = ec.iter().map(|c| c.mean.clone()).collect();
                let em_c: Vec<_> = ec.iter().map(|c| c.covariance.to_dense()).collect();
                worst_em = worst_em.max(param_gap(&tamd.params, &ew, &em_m, &em_c));
            }
            _ => errors += 1,
        }
    }
    verdict(
        errors == 0 && worst < 1e-8 && worst_em < 1e-8,
        format!(
            "10 problems x 10 iterations, {errors} incomplete, max |penalty-free fitter - textbook EM| {worst:.2e}, vs EM baseline {worst_em:.2e} (< 1e-8)"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn success_rate(records: &[RunRecord], method: Method) -> (f64, usize) {
    let rows: Vec<&RunRecord> = records.iter().filter(|r| r.method == method).collect();
    let ok = rows.iter().filter(|r| r.success && r.error.is_none()).count();
    (ok as f64 / rows.len() as f64, rows.len())
}

fn degeneracy_direction() -> Verdict {
    let t = Instant::now();
    let spec = Builtin::Table1.spec(false).unwrap();
    let records = execute(&spec, 0).unwrap();
    let elapsed = t.elapsed();
    let (tamd, rt) = success_rate(&records, Method::Tamd);
    let (em, re) = success_rate(&records, Method::Em);
    let degenerate = |m: Method| {
        records
            .iter()
            .filter(|r| r.method == m && r.degenerate)
            .count()
    };
    verdict(
        tamd - em >= 0.2 && tamd >= 0.9 && within(elapsed, 600.0),
        format!(
            "success TAMD {tamd:.3} ({rt} runs), EM {em:.3} ({re} runs), gap {:.3} (>= 0.2), degenerate TAMD {} EM {}, {:.1}s (< 600s)",
            tamd - em,
            degenerate(Method::Tamd),
            degenerate(Method::Em),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 7

const CONSISTENCY_SPEC: &str = "
name = consistency
dgp.kind = well_specified
dgp.n = [250, 1000, 4000]
dgp.d = 2
dgp.k = 3
dgp.delta = 3.0
methods = [tamd]
replications = 20
base_seed = 7
init = perturbed_truth
hellinger_draws = 200
heldout_n = 200
";

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

fn consistency_trend() -> Verdict {
    let t = Instant::now();
    let spec = ExperimentSpec::parse(CONSISTENCY_SPEC).unwrap();
    let records = execute(&spec, 0).unwrap();
    let elapsed = t.elapsed();
    let errors = records.iter().filter(|r| r.error.is_some()).count();
    let medians: Vec<(usize, f64)> = [250, 1000, 4000]
        .iter()
        .map(|&n| {
            let v: Vec<f64> = records.iter().filter(|r| r.cell.n == n).map(|r| r.mean_mse).collect();
            assert_eq!(v.len(), 20);
            (n, median(v))
        })
        .collect();
    let decreasing = medians.windows(2).all(|w| w[1].1 < w[0].1);
    let shown: Vec<String> = medians.iter().map(|(n, m)| format!("n={n}: {m:.3e}")).collect();
    verdict(
        errors == 0 && decreasing && within(elapsed, 300.0),
        format!(
            "median mean_mse {} ({} errors), {:.1}s (< 300s)",
            shown.join(", "),
            errors,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 8

struct PathTrace {
    values: Vec<f64>,
    stopped: Option<String>,
}

impl PathTrace {
    fn monotone(&self) -> bool {
        self.values.windows(2).all(|w| w[1] > w[0])
    }

    fn peak(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn describe(&self, name: &str) -> String {
        format!(
            "{name}: {} points, {}, max R_T {:.4e}{}",
            self.values.len(),
            if self.monotone() { "increasing" } else { "NOT increasing" },
            self.peak(),
            self.stopped.as_deref().map(|s| format!(" (stopped: {s})")).unwrap_or_default()
        )
    }
}

/// Evaluates `R_T` along `theta(s)` for `s` in `grid`, stopping at the first
/// point the penalty cannot be evaluated.
fn walk<F>(grid: impl Iterator<Item = f64>, cfg: &PenaltyConfig, theta: F) -> PathTrace
where
    F: Fn(f64) -> tamd_core::Result<MixtureParams>,
{
    let mut values = Vec::new();
    for s in grid {
        match theta(s).and_then(|th| penalty(&th, cfg)) {
            Ok(p) => values.push(p.total),
            Err(TamdError::BarrierDomain(msg)) | Err(TamdError::Contract(msg)) => {
                return PathTrace {
                    values,
                    stopped: Some(format!("at s = {s:e}: {msg}")),
                }
            }
            Err(e) => panic!("unexpected error on path: {e}"),
        }
    }
    PathTrace { values, stopped: None }
}

fn coercivity() -> Verdict {
    let eye = || SpdMatrix::identity(2);
    let at = |x: f64, y: f64| DVector::from_vec(vec![x, y]);
    let third = 1.0 / 3.0;

    // mean coalescence: μ_2 = (1 - s)·(4, 0) → μ_1 = 0 as s → 1
    let cfg = PenaltyConfig::default();
    let coalesce = walk((0..=400).map(|i| 1.0 - 10f64.powf(-(i as f64) / 10.0)), &cfg, |s| {
        MixtureParams::new(
            vec![0.5, 0.5],
            vec![
                GaussianComponent::new(at(0.0, 0.0), eye())?,
                GaussianComponent::new(at(4.0 * (1.0 - s), 0.0), eye())?,
            ],
        )
    });

    // weight vanishing: π_1 = s → 0 over well separated components
    let far = |c: f64| GaussianComponent::new(at(c, 0.0), SpdMatrix::identity(2)).unwrap();
    let weights = (0..)
        .map(|i| third * 10f64.powi(-i))
        .take_while(|&s| s > 0.0)
        .chain([f64::from_bits(1)]);
    let vanish = walk(weights, &cfg, |s| {
        MixtureParams::new(vec![s, (1.0 - s) / 2.0, (1.0 - s) / 2.0], vec![far(-50.0), far(0.0), far(50.0)])
    });

    // scale blow-up: Σ_1 = s·I → ∞ with λ_sc > 0
    let scale_cfg = PenaltyConfig {
        lambda_sc: 0.1,
        ..PenaltyConfig::default()
    };
    let blow_up = walk((0..=60).map(|i| 1.5f64.powi(i)), &scale_cfg, |s| {
        MixtureParams::new(
            vec![0.5, 0.5],
            vec![
                GaussianComponent::new(at(0.0, 0.0), SpdMatrix::scaled_identity(2, s)?)?,
                GaussianComponent::new(at(4.0, 0.0), eye())?,
            ],
        )
    });

    let paths = [("mean coalescence", &coalesce), ("weight vanishing", &vanish), ("scale blow-up", &blow_up)];
    let pass = paths.iter().all(|(_, p)| p.monotone() && p.peak() > 1e3);
    let detail: Vec<String> = paths.iter().map(|(n, p)| p.describe(n)).collect();
    verdict(pass, detail.join("; "))
}

// ---------------------------------------------------------------- 9

const DETERMINISM_SPEC: &str = "
name = determinism
dgp.kind = contaminated
dgp.n = [150, 300]
dgp.d = 2
dgp.k = 3
dgp.delta = 2.0
dgp.eps = [0, 0.05]
methods = [tamd, em]
replications = 3
base_seed = 11
hellinger_draws = 500
heldout_n = 300
";

fn run_benchmark(spec: &Path, out: &Path, threads: usize) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_tamd"))
        .args(["--quiet", "--threads", &threads.to_string(), "--out"])
        .arg(out)
        .arg("benchmark")
        .arg(spec)
        .status()
        .expect("tamd binary runs");
    assert_eq!(status.code(), Some(0), "benchmark exit status");
    fs::read(out.join("results.csv")).expect("results.csv written")
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.txt");
    fs::write(&spec, DETERMINISM_SPEC).unwrap();
    let first = run_benchmark(&spec, &dir.path().join("a"), 1);
    let rerun = run_benchmark(&spec, &dir.path().join("b"), 1);
    let wide = run_benchmark(&spec, &dir.path().join("c"), 8);
    let rows = first.iter().filter(|&&b| b == b'\n').count().saturating_sub(1);
    verdict(
        rows == 24 && first == rerun && first == wide,
        format!(
            "{rows} rows; rerun identical: {}; 1 vs 8 threads identical: {}",
            first == rerun,
            first == wide
        ),
    )
}

// ---------------------------------------------------------------- 10

/// `P(X >= wins)` for `X ~ Binomial(trials, 1/2)`.
fn sign_test_p(wins: usize, trials: usize) -> f64 {
    let mut p = 0.0;
    let mut choose = 1.0f64;
    for x in 0..=trials {
        if x > 0 {
            choose *= (trials - x + 1) as f64 / x as f64;
        }
        if x >= wins {
            p += choose;
        }
    }
    p / 2f64.powi(trials as i32)
}

fn contamination_robustness() -> Verdict {
    let t = Instant::now();
    let spec = Builtin::Robustness.spec(false).unwrap();
    let records = execute(&spec, 0).unwrap();
    let elapsed = t.elapsed();
    let ll = |eps: f64, m: Method, rep: usize| {
        records
            .iter()
            .find(|r| r.cell.eps == eps && r.method == m && r.replication == rep)
            .map(|r| r.heldout_loglik)
            .unwrap_or(f64::NAN)
    };
    let (mut wins, mut trials) = (0, 0);
    for rep in 0..spec.replications {
        let tamd = ll(0.0, Method::Tamd, rep) - ll(0.10, Method::Tamd, rep);
        let em = ll(0.0, Method::Em, rep) - ll(0.10, Method::Em, rep);
        if !(tamd.is_finite() && em.is_finite()) {
            // a failed fit counts against the penalized method
            trials += 1;
            continue;
        }
        if tamd != em {
            trials += 1;
            if tamd < em {
                wins += 1;
            }
        }
    }
    let p = sign_test_p(wins, trials);
    let mean = |eps: f64, m: Method| {
        let v: Vec<f64> = (0..spec.replications).map(|r| ll(eps, m, r)).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    verdict(
        p < 0.05 && within(elapsed, 600.0),
        format!(
            "TAMD degrades less in {wins}/{trials} replications, one-sided sign test p = {p:.4} (< 0.05); mean held-out loglik TAMD {:.4} / {:.4} / {:.4}, EM {:.4} / {:.4} / {:.4} at eps 0 / 0.05 / 0.10; {:.1}s (< 600s)",
            mean(0.0, Method::Tamd),
            mean(0.05, Method::Tamd),
            mean(0.10, Method::Tamd),
            mean(0.0, Method::Em),
            mean(0.05, Method::Em),
            mean(0.10, Method::Em),
            elapsed.as_secs_f64()
        ),
    )
}

// ----------------------------------------------------------------

fn main() {
    // keep libtest-style filtering from turning this into a no-op
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| !"acceptance".contains(a.as_str())) {
        return;
    }

    let ascent = ascent_fits();
    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        (1, "gradient oracle", Box::new(gradient_oracle)),
        (2, "affinity quadrature", Box::new(affinity_quadrature)),
        (3, "monotone ascent", Box::new(|| monotone_ascent(&ascent))),
        (4, "EM reduction", Box::new(em_reduction)),
        (5, "degeneracy direction", Box::new(degeneracy_direction)),
        (6, "weight floor", Box::new(|| weight_floor(&ascent))),
        (7, "consistency trend", Box::new(consistency_trend)),
        (8, "coercivity", Box::new(coercivity)),
        (9, "determinism", Box::new(determinism)),
        (10, "contamination robustness", Box::new(contamination_robustness)),
    ];

    let mut fatal = Vec::new();
    let mut failed = 0;
    for (id, name, run) in &criteria {
        let v = run();
        let waiver = KNOWN_FAILURES.iter().find(|(w, _)| w == id).map(|(_, why)| *why);
        println!(
            "criterion {id:>2} {name:<26} {}  {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        if !v.pass {
            failed += 1;
            match waiver {
                Some(why) => println!("             known failure: {why}"),
                None => fatal.push(*id),
            }
        }
    }
    println!("acceptance: {} passed, {} failed, {} unexpected", criteria.len() - failed, failed, fatal.len());
    if !fatal.is_empty() {
        eprintln!("unexpected acceptance failures: {fatal:?}");
        std::process::exit(1);
    }
}
