//! Plain EM for Gaussian mixtures, used as the comparison baseline.
//!
//! Kept separate from [`crate::tamd`] on purpose: with the penalty switched
//! off the two must agree, and that check is only meaningful if they do not
//! share the E/M code.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::affinity::{mean_log_likelihood, MixtureParams};
use crate::error::{check_dim, Result, TamdError};
use crate::gaussmath::{cholesky, log_density_rows, GaussianComponent};
use crate::simgen::{init_random, InitScheme};
use crate::tamd::FitResult;

/// Covariance safeguard added at every M-step.
pub const EM_JITTER: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    pub convergence_tol: f64,
    pub restarts: usize,
    pub degeneracy_det_threshold: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            convergence_tol: 1e-8,
            restarts: 1,
            degeneracy_det_threshold: 1e-6,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.restarts == 0 {
            return Err(TamdError::Contract("max_iters and restarts must be positive".into()));
        }
        if !(self.convergence_tol >= 0.0) || !(self.degeneracy_det_threshold > 0.0) {
            return Err(TamdError::Contract(
                "convergence_tol must be >= 0 and degeneracy_det_threshold > 0".into(),
            ));
        }
        Ok(())
    }
}

enum MStep {
    Next(MixtureParams),
    /// A component lost all mass or its scatter could not be factored.
    Collapsed,
}

fn responsibilities(data: &DMatrix<f64>, theta: &MixtureParams) -> Result<DMatrix<f64>> {
    let (n, k) = (data.nrows(), theta.k());
    let mut r = DMatrix::zeros(n, k);
    for (j, comp) in theta.components().iter().enumerate() {
        let logf = log_density_rows(data, comp)?;
        let lw = theta.weights()[j].ln();
        r.column_mut(j).iter_mut().zip(logf.iter()).for_each(|(slot, v)| *slot = lw + v);
    }
    for mut row in r.row_iter_mut() {
        let max = row.max();
        if !max.is_finite() {
            row.fill(1.0 / k as f64);
            continue;
        }
        row.apply(|v| *v = (*v - max).exp());
        let total = row.sum();
        row /= total;
    }
    Ok(r)
}

fn m_step(data: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<MStep> {
    let (n, d) = (data.nrows(), data.ncols());
    let mut weights = Vec::with_capacity(r.ncols());
    let mut comps = Vec::with_capacity(r.ncols());
    for col in r.column_iter() {
        let mass: f64 = col.sum();
        if !(mass > 0.0) {
            return Ok(MStep::Collapsed);
        }
        let mut mean = DVector::zeros(d);
        for i in 0..n {
            mean.axpy(col[i], &data.row(i).transpose(), 1.0);
        }
        mean /= mass;
        let mut scatter = DMatrix::zeros(d, d);
        for i in 0..n {
            let diff = data.row(i).transpose() - &mean;
            scatter.ger(col[i], &diff, &diff, 1.0);
        }
        scatter /= mass;
        let cov = match cholesky(&scatter, EM_JITTER) {
            Ok(c) => c,
            Err(TamdError::DegenerateCovariance { .. }) => return Ok(MStep::Collapsed),
            Err(e) => return Err(e),
        };
        weights.push(mass / n as f64);
        comps.push(GaussianComponent::new(mean, cov)?);
    }
    Ok(MStep::Next(MixtureParams::normalized(weights, comps)?))
}

/// Textbook EM from `init`. Halts at the first iterate whose smallest
/// covariance determinant is at or below the threshold and reports that
/// iterate with `degenerate = true`. If an M-step cannot even be formed the
/// last valid iterate is reported, also flagged.
pub fn em_fit(data: &DMatrix<f64>, init: &MixtureParams, cfg: &EmConfig) -> Result<FitResult> {
    let start = Instant::now();
    cfg.validate()?;
    check_dim("data columns", init.dim(), data.ncols())?;

    let mut theta = init.clone();
    let mut ll = mean_log_likelihood(data, &theta)?;
    let mut trace = vec![ll];
    let mut converged = false;
    let mut degenerate = false;

    for _ in 0..cfg.max_iters {
        let r = responsibilities(data, &theta)?;
        let next = match m_step(data, &r)? {
            MStep::Next(p) => p,
            MStep::Collapsed => {
                degenerate = true;
                break;
            }
        };
        let next_ll = mean_log_likelihood(data, &next)?;
        let change = (next_ll - ll).abs() / ll.abs().max(1.0);
        theta = next;
        ll = next_ll;
        trace.push(ll);
        if theta.min_covariance_det() <= cfg.degeneracy_det_threshold || !ll.is_finite() {
            degenerate = true;
            break;
        }
        if change < cfg.convergence_tol {
            converged = true;
            break;
        }
    }

    let degenerate = degenerate || theta.min_covariance_det() <= cfg.degeneracy_det_threshold;
    Ok(FitResult {
        iterations: trace.len() - 1,
        params: theta,
        objective_trace: trace,
        converged,
        degenerate,
        wall_time: start.elapsed().as_secs_f64(),
        backtrack_events: 0,
        gradient_evals: 0,
        frozen_updates: 0,
    })
}

/// Runs [`em_fit`] from `cfg.restarts` k-means++-style initializations drawn
/// from `rng` and keeps the best non-degenerate final log-likelihood (or the
/// best degenerate one if every restart collapsed). `wall_time` covers all
/// restarts.
pub fn em_fit_restarts<R: Rng + ?Sized>(
    data: &DMatrix<f64>,
    k: usize,
    cfg: &EmConfig,
    rng: &mut R,
) -> Result<FitResult> {
    best_of_restarts(data, None, k, cfg, rng)
}

/// Like [`em_fit_restarts`], but the first restart starts from `init` so a
/// single-restart run sees exactly the initialization given to another method.
pub fn em_fit_paired<R: Rng + ?Sized>(
    data: &DMatrix<f64>,
    init: &MixtureParams,
    cfg: &EmConfig,
    rng: &mut R,
) -> Result<FitResult> {
    best_of_restarts(data, Some(init), init.k(), cfg, rng)
}

fn best_of_restarts<R: Rng + ?Sized>(
    data: &DMatrix<f64>,
    first: Option<&MixtureParams>,
    k: usize,
    cfg: &EmConfig,
    rng: &mut R,
) -> Result<FitResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut best: Option<FitResult> = None;
    for r in 0..cfg.restarts {
        let res = match (r, first) {
            (0, Some(init)) => em_fit(data, init, cfg)?,
            _ => em_fit(data, &init_random(data, k, &InitScheme::KmeansppLike, rng)?, cfg)?,
        };
        let better = match &best {
            None => true,
            Some(b) => match (b.degenerate, res.degenerate) {
                (true, false) => true,
                (false, true) => false,
                _ => res.final_objective() > b.final_objective(),
            },
        };
        if better {
            best = Some(res);
        }
    }
    let mut best = best.expect("restarts >= 1");
    best.wall_time = start.elapsed().as_secs_f64();
    Ok(best)
}
