//! The penalized EM-type fitter.
//!
//! One iteration is: E-step, closed-form penalized weight step, one
//! gradient-corrected mean/covariance step per component, then a
//! backtracking guard that only accepts iterates that do not decrease
//! `J_n` (beyond `monotonicity_tol`).

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::affinity::{log_joint, objective, separation, MixtureParams, PenaltyConfig};
use crate::barrier_grad::grad_barrier;
use crate::error::{check_dim, Result, TamdError};
use crate::gaussmath::{cholesky, cholesky_exact, log_sum_exp, symmetrize_in_place, GaussianComponent};

/// A fit is flagged degenerate when `min_k det Σ_k` is at or below this.
pub const DEGENERACY_DET_THRESHOLD: f64 = 1e-6;

/// Column mass below which a component is frozen for the iteration.
const EMPTY_COMPONENT_MASS: f64 = 1e-10;

/// Halvings of the penalty correction tried before falling back to the
/// plain M-step covariance.
const MAX_CORRECTION_HALVINGS: usize = 30;

/// Soft assignments `r_ik` and column sums `N_k`.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    pub matrix: DMatrix<f64>,
    pub column_mass: DVector<f64>,
    /// Rows whose mixture density underflowed everywhere and were set to `1/K`.
    pub fallback_rows: usize,
}

impl Responsibilities {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn k(&self) -> usize {
        self.matrix.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitterConfig {
    pub max_iters: usize,
    /// Stop once `|ΔJ_n| / max(|J_n|, 1)` falls below this.
    pub convergence_tol: f64,
    pub penalty: PenaltyConfig,
    pub backtrack_factor: f64,
    pub backtrack_max_steps: usize,
    pub monotonicity_tol: f64,
}

impl Default for FitterConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            convergence_tol: 1e-8,
            penalty: PenaltyConfig::default(),
            backtrack_factor: 0.5,
            backtrack_max_steps: 30,
            monotonicity_tol: 1e-10,
        }
    }
}

impl FitterConfig {
    /// Defaults with `λ_n = √(log n / n)`.
    pub fn for_sample_size(n: usize) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.penalty.lambda_n = default_lambda(n)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.penalty.validate()?;
        if self.max_iters == 0 {
            return Err(TamdError::Contract("max_iters must be positive".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(TamdError::Contract("convergence_tol must be >= 0".into()));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(TamdError::Contract(format!(
                "backtrack_factor must be in (0, 1), got {}",
                self.backtrack_factor
            )));
        }
        if self.backtrack_max_steps == 0 {
            return Err(TamdError::Contract("backtrack_max_steps must be positive".into()));
        }
        if !(self.monotonicity_tol >= 0.0) {
            return Err(TamdError::Contract("monotonicity_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Outcome of a fit. Shared by the penalized fitter and the EM baseline.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: MixtureParams,
    /// Objective at the initial point and after every accepted iterate.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub degenerate: bool,
    /// Seconds.
    pub wall_time: f64,
    /// Iterations that needed the backtracking line search.
    pub backtrack_events: usize,
    /// Calls to [`grad_barrier`], one per component per iteration.
    pub gradient_evals: usize,
    /// Component updates skipped because the component had no mass.
    pub frozen_updates: usize,
}

impl FitResult {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial objective")
    }
}

/// `λ_n = √(log n / n)`.
pub fn default_lambda(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(TamdError::Contract(format!("default_lambda needs n >= 2, got {n}")));
    }
    let n = n as f64;
    Ok((n.ln() / n).sqrt())
}

/// E-step in log space.
pub fn e_step(data: &DMatrix<f64>, theta: &MixtureParams) -> Result<Responsibilities> {
    check_dim("data columns", theta.dim(), data.ncols())?;
    let (n, k) = (data.nrows(), theta.k());
    let mut matrix = log_joint(data, theta)?;
    let mut row = vec![0.0; k];
    let mut fallback_rows = 0;
    for i in 0..n {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = matrix[(i, j)];
        }
        let norm = log_sum_exp(&row)?;
        if norm.is_finite() {
            let mut total = 0.0;
            for j in 0..k {
                let r = (row[j] - norm).exp();
                matrix[(i, j)] = r;
                total += r;
            }
            for j in 0..k {
                matrix[(i, j)] /= total;
            }
        } else {
            fallback_rows += 1;
            for j in 0..k {
                matrix[(i, j)] = 1.0 / k as f64;
            }
        }
    }
    let column_mass = DVector::from_iterator(k, matrix.column_iter().map(|c| c.sum()));
    Ok(Responsibilities {
        matrix,
        column_mass,
        fallback_rows,
    })
}

/// Exact maximizer of `Σ_k (N_k/n + λ_n λ_wt) log π_k` over the simplex:
/// `π_k = (N_k/n + λ_n λ_wt) / (1 + K λ_n λ_wt)`.
pub fn weight_step(resp: &Responsibilities, cfg: &FitterConfig) -> Vec<f64> {
    let n = resp.n() as f64;
    let k = resp.k() as f64;
    let c = cfg.penalty.lambda_n * cfg.penalty.lambda_wt;
    let denom = 1.0 + k * c;
    let weights: Vec<f64> = resp
        .column_mass
        .iter()
        .map(|&mass| (mass / n + c) / denom)
        .collect();
    if weights.iter().all(|&w| w > 0.0) {
        return weights;
    }
    // unpenalized with an empty column: keep the simplex interior
    let floored: Vec<f64> = weights.iter().map(|w| w.max(1e-300)).collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|w| w / total).collect()
}

/// Weighted mean and covariance of the data under column `k` of `resp`.
pub(crate) fn weighted_stats(
    data: &DMatrix<f64>,
    resp: &Responsibilities,
    k: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = (data.nrows(), data.ncols());
    let mass = resp.column_mass[k];
    let r = resp.matrix.column(k);
    let mean = (data.transpose() * r) / mass;
    let mut centered = data.clone();
    for i in 0..n {
        let w = r[i].sqrt();
        for c in 0..d {
            centered[(i, c)] = (centered[(i, c)] - mean[c]) * w;
        }
    }
    let mut cov = centered.transpose() * &centered / mass;
    symmetrize_in_place(&mut cov);
    (mean, cov)
}

/// Penalized M-step for component `k`.
///
/// Proposes `μ' = x̄_k − λ_n Σ_k G_μ` and `Σ' = S_k − λ_n Σ_k G_Σ Σ_k` with
/// `G = ∇R_T` from [`grad_barrier`], i.e. a preconditioned ascent step on
/// `−λ_n R_T`, then adds `ε·I` and refactors. If the corrected covariance is
/// not positive definite the correction is halved until it is.
///
/// Returns `None` when the component carries no mass; it is then kept as is.
pub fn component_step(
    data: &DMatrix<f64>,
    resp: &Responsibilities,
    theta: &MixtureParams,
    k: usize,
    cfg: &FitterConfig,
) -> Result<Option<GaussianComponent>> {
    if resp.column_mass[k] <= EMPTY_COMPONENT_MASS {
        return Ok(None);
    }
    let (xbar, scatter) = weighted_stats(data, resp, k);
    let pen = &cfg.penalty;
    if pen.lambda_n == 0.0 {
        let cov = cholesky(&scatter, pen.jitter)?;
        return Ok(Some(GaussianComponent::new(xbar, cov)?));
    }

    let grad = grad_barrier(theta, k, pen)?;
    let sigma = theta.component(k).covariance.to_dense();
    let mean = &xbar - (&sigma * &grad.wrt_mean) * pen.lambda_n;
    let mut correction = &sigma * &grad.wrt_cov * &sigma * pen.lambda_n;
    symmetrize_in_place(&mut correction);

    for _ in 0..MAX_CORRECTION_HALVINGS {
        if let Ok(cov) = cholesky_exact(&(&scatter - &correction), pen.jitter) {
            return Ok(Some(GaussianComponent::new(mean, cov)?));
        }
        correction *= 0.5;
    }
    let cov = cholesky(&scatter, pen.jitter)?;
    Ok(Some(GaussianComponent::new(mean, cov)?))
}

fn interpolate_components(
    from: &MixtureParams,
    to: &MixtureParams,
    alpha: f64,
) -> Result<MixtureParams> {
    let comps = from
        .components()
        .iter()
        .zip(to.components())
        .map(|(a, b)| {
            let mean = &a.mean * (1.0 - alpha) + &b.mean * alpha;
            let dense = a.covariance.to_dense() * (1.0 - alpha) + b.covariance.to_dense() * alpha;
            GaussianComponent::new(mean, cholesky(&dense, 0.0)?)
        })
        .collect::<Result<Vec<_>>>()?;
    MixtureParams::new(to.weights().to_vec(), comps)
}

/// `J_n`, with points outside the barrier domain or non-factorizable pair
/// matrices mapped to `−∞` so the line search rejects them.
fn guarded_objective(data: &DMatrix<f64>, theta: &MixtureParams, pen: &PenaltyConfig) -> Result<f64> {
    match objective(data, theta, pen) {
        Ok(v) if v.is_nan() => Ok(f64::NEG_INFINITY),
        Ok(v) => Ok(v),
        Err(TamdError::BarrierDomain(_)) | Err(TamdError::DegenerateCovariance { .. }) => {
            Ok(f64::NEG_INFINITY)
        }
        Err(e) => Err(e),
    }
}

/// Runs the penalized fitter from `init`.
///
/// Backtracking interpolates component parameters between the current and
/// proposed iterate while keeping the proposed weights: the weight step is an
/// exact surrogate maximizer, so the `α → 0` end of the segment already
/// ascends. If no step size is accepted the fit stops at the current iterate.
pub fn fit(data: &DMatrix<f64>, init: &MixtureParams, cfg: &FitterConfig) -> Result<FitResult> {
    fit_observed(data, init, cfg, |_, _, _| {})
}

/// [`fit`], calling `observer(iteration, θ, J_n)` after every accepted iterate.
pub fn fit_observed<F>(
    data: &DMatrix<f64>,
    init: &MixtureParams,
    cfg: &FitterConfig,
    mut observer: F,
) -> Result<FitResult>
where
    F: FnMut(usize, &MixtureParams, f64),
{
    let start = Instant::now();
    cfg.validate()?;
    check_dim("data columns", init.dim(), data.ncols())?;
    if data.nrows() == 0 {
        return Err(TamdError::Contract("empty data".into()));
    }
    let pen = cfg.penalty;
    let sep = separation(init)?;
    if init.k() >= 2 && !(sep > 0.0) {
        return Err(TamdError::InvalidInit(format!("initial separation is {sep}")));
    }
    let mut current_j = match objective(data, init, &pen) {
        Ok(v) if v.is_finite() => v,
        Ok(v) => return Err(TamdError::InvalidInit(format!("initial objective is {v}"))),
        Err(TamdError::BarrierDomain(msg)) => return Err(TamdError::InvalidInit(msg)),
        Err(e) => return Err(e),
    };

    let mut theta = init.clone();
    let mut trace = vec![current_j];
    let mut converged = false;
    let mut degenerate = false;
    let mut backtrack_events = 0;
    let mut gradient_evals = 0;
    let mut frozen_updates = 0;

    for _ in 0..cfg.max_iters {
        let resp = e_step(data, &theta)?;
        let weights = weight_step(&resp, cfg);

        let mut comps = Vec::with_capacity(theta.k());
        let mut collapsed = false;
        for k in 0..theta.k() {
            match component_step(data, &resp, &theta, k, cfg) {
                Ok(Some(c)) => {
                    if pen.lambda_n != 0.0 {
                        gradient_evals += 1;
                    }
                    comps.push(c);
                }
                Ok(None) => {
                    frozen_updates += 1;
                    comps.push(theta.component(k).clone());
                }
                Err(TamdError::DegenerateCovariance { .. }) => {
                    collapsed = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if collapsed {
            degenerate = true;
            break;
        }

        let proposal = MixtureParams::new(weights, comps)?;
        let mut accepted = None;
        let j_prop = guarded_objective(data, &proposal, &pen)?;
        if j_prop >= current_j - cfg.monotonicity_tol {
            accepted = Some((proposal, j_prop));
        } else {
            backtrack_events += 1;
            let mut alpha = 1.0;
            for _ in 0..cfg.backtrack_max_steps {
                alpha *= cfg.backtrack_factor;
                let candidate = interpolate_components(&theta, &proposal, alpha)?;
                let j = guarded_objective(data, &candidate, &pen)?;
                if j >= current_j - cfg.monotonicity_tol {
                    accepted = Some((candidate, j));
                    break;
                }
            }
        }

        let Some((next, next_j)) = accepted else {
            break;
        };
        if pen.lambda_n > 0.0 && next.k() >= 2 {
            debug_assert!(separation(&next)? > 0.0);
        }
        let change = (next_j - current_j).abs() / current_j.abs().max(1.0);
        theta = next;
        current_j = next_j;
        trace.push(current_j);
        observer(trace.len() - 1, &theta, current_j);
        if change < cfg.convergence_tol {
            converged = true;
            break;
        }
    }

    let degenerate = degenerate || theta.min_covariance_det() <= DEGENERACY_DET_THRESHOLD;
    Ok(FitResult {
        iterations: trace.len() - 1,
        params: theta,
        objective_trace: trace,
        converged,
        degenerate,
        wall_time: start.elapsed().as_secs_f64(),
        backtrack_events,
        gradient_evals,
        frozen_updates,
    })
}
