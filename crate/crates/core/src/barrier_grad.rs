//! Analytic gradients of the penalty `R_T` with respect to a component's
//! mean and covariance, and a central finite-difference checker.
//!
//! Differentiating `log A = ¼ log|Σ_a| + ¼ log|Σ_b| − ½ log|M| − ⅛ δᵀM⁻¹δ`
//! with respect to `(μ_a, Σ_a)` gives
//!
//! ```text
//! ∇_μa log A = −¼ M⁻¹δ
//! ∇_Σa log A = ¼ Σ_a⁻¹ − ¼ M⁻¹ + (1/16) M⁻¹δδᵀM⁻¹
//! ```
//!
//! and the pair barrier `−log(1 − A)` picks up the factor `A/(1 − A)`.
//! Covariance gradients are in dense symmetric coordinates: the directional
//! derivative along a symmetric perturbation `D` is `⟨G_Σ, D⟩`.

use nalgebra::{DMatrix, DVector};

use crate::affinity::{
    affinity_parts, one_minus_affinity, penalty, separation, MixtureParams, PenaltyConfig,
    MAX_AFFINITY,
};
use crate::error::{Result, TamdError};
use crate::gaussmath::{cholesky_exact, GaussianComponent, SpdMatrix};

/// Per-pair quantities `M_kj`, `δ_kj`, `M_kj⁻¹δ_kj` and `A_kj`.
#[derive(Debug, Clone)]
pub struct PairGeometry {
    pub m_inverse_delta: DVector<f64>,
    pub m: SpdMatrix,
    pub delta: DVector<f64>,
    pub affinity: f64,
    log_affinity: f64,
}

impl PairGeometry {
    pub fn new(a: &GaussianComponent, b: &GaussianComponent) -> Result<Self> {
        let parts = affinity_parts(a, b)?;
        let affinity = parts.log_affinity.exp();
        if affinity > MAX_AFFINITY || one_minus_affinity(parts.log_affinity) < 1.0 - MAX_AFFINITY {
            return Err(TamdError::BarrierDomain(format!(
                "affinity {affinity} is at the barrier"
            )));
        }
        Ok(Self {
            m_inverse_delta: parts.m_inverse_delta,
            m: parts.m,
            delta: parts.delta,
            affinity,
            log_affinity: parts.log_affinity,
        })
    }

    /// `A/(1 − A)`, the chain-rule factor of `−log(1 − A)`.
    pub fn barrier_factor(&self) -> f64 {
        self.affinity / one_minus_affinity(self.log_affinity)
    }
}

/// Gradient with respect to one component's `(μ, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierGradient {
    pub wrt_mean: DVector<f64>,
    pub wrt_cov: DMatrix<f64>,
}

impl BarrierGradient {
    pub fn zeros(dim: usize) -> Self {
        Self {
            wrt_mean: DVector::zeros(dim),
            wrt_cov: DMatrix::zeros(dim, dim),
        }
    }

    fn axpy(&mut self, scale: f64, other: &BarrierGradient) {
        self.wrt_mean.axpy(scale, &other.wrt_mean, 1.0);
        self.wrt_cov += &other.wrt_cov * scale;
    }

    /// Largest absolute entry across both blocks.
    pub fn max_abs(&self) -> f64 {
        self.wrt_mean
            .iter()
            .chain(self.wrt_cov.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn log_affinity_gradient(a: &GaussianComponent, geom: &PairGeometry) -> BarrierGradient {
    let v = &geom.m_inverse_delta;
    let wrt_mean = v * -0.25;
    let mut wrt_cov = (a.covariance.inverse() - geom.m.inverse()) * 0.25 + (v * v.transpose()) * 0.0625;
    crate::gaussmath::symmetrize_in_place(&mut wrt_cov);
    BarrierGradient { wrt_mean, wrt_cov }
}

/// `∇_{(μ_a, Σ_a)} log A(a, b)`.
pub fn grad_log_affinity(a: &GaussianComponent, b: &GaussianComponent) -> Result<BarrierGradient> {
    let geom = PairGeometry::new(a, b)?;
    Ok(log_affinity_gradient(a, &geom))
}

/// Gradient of `R_T(θ)` with respect to component `k`'s mean and covariance:
/// the separation barrier over all `j ≠ k` plus `λ_sc·∇φ`. The weight barrier
/// does not depend on `(μ_k, Σ_k)`.
pub fn grad_barrier(theta: &MixtureParams, k: usize, cfg: &PenaltyConfig) -> Result<BarrierGradient> {
    if k >= theta.k() {
        return Err(TamdError::Contract(format!(
            "component index {k} out of range for K = {}",
            theta.k()
        )));
    }
    let comps = theta.components();
    let own = &comps[k];
    let mut grad = BarrierGradient::zeros(theta.dim());
    for (j, other) in comps.iter().enumerate() {
        if j == k {
            continue;
        }
        let geom = PairGeometry::new(own, other)?;
        let factor = geom.barrier_factor();
        if factor == 0.0 {
            continue;
        }
        grad.axpy(factor, &log_affinity_gradient(own, &geom));
    }
    if cfg.lambda_sc != 0.0 {
        if cfg.alpha != 0.0 {
            grad.wrt_mean.axpy(2.0 * cfg.lambda_sc * cfg.alpha, &own.mean, 1.0);
        }
        if cfg.beta != 0.0 {
            grad.wrt_cov += own.covariance.to_dense() * (2.0 * cfg.lambda_sc * cfg.beta);
        }
    }
    Ok(grad)
}

/// Relative discrepancy below which the denominator is floored, so that
/// vanishing gradients compare on an absolute scale.
const FD_ABS_FLOOR: f64 = 1e-4;
const FD_REL_FLOOR: f64 = 1e-3;

/// Central finite-difference check of [`grad_barrier`] against [`penalty`].
/// Returns the largest relative discrepancy over every mean coordinate and
/// every symmetric covariance coordinate of every component.
pub fn fd_check(theta: &MixtureParams, cfg: &PenaltyConfig, step: f64) -> Result<f64> {
    fd_check_with(theta, cfg, step, |t, k, c| grad_barrier(t, k, c))
}

/// [`fd_check`] against an arbitrary analytic gradient.
pub fn fd_check_with<F>(theta: &MixtureParams, cfg: &PenaltyConfig, step: f64, analytic: F) -> Result<f64>
where
    F: Fn(&MixtureParams, usize, &PenaltyConfig) -> Result<BarrierGradient>,
{
    if !(step > 0.0 && step <= 1e-3) {
        return Err(TamdError::Contract(format!("fd step must be in (0, 1e-3], got {step}")));
    }
    if theta.k() >= 2 {
        let sep = separation(theta)?;
        if !(sep > 10.0 * step) {
            return Err(TamdError::BarrierDomain(format!(
                "separation {sep:e} too small for fd step {step:e}"
            )));
        }
    }
    let eval = |t: &MixtureParams| penalty(t, cfg).map(|p| p.total);

    let mut worst: f64 = 0.0;
    for k in 0..theta.k() {
        let grad = analytic(theta, k, cfg)?;
        let scale = grad.max_abs();
        let floor = FD_ABS_FLOOR.max(FD_REL_FLOOR * scale);
        let comp = theta.component(k);
        let d = comp.dim();

        for c in 0..d {
            let numeric = central_difference(step, |h| {
                let mut mean = comp.mean.clone();
                mean[c] += h;
                let moved = GaussianComponent::new(mean, comp.covariance.clone())?;
                eval(&theta.with_component(k, moved)?)
            })?;
            worst = worst.max(relative_error(numeric, grad.wrt_mean[c], floor));
        }

        let dense = comp.covariance.to_dense();
        for r in 0..d {
            for c in 0..=r {
                let numeric = central_difference(step, |h| {
                    let mut m = dense.clone();
                    m[(r, c)] += h;
                    if r != c {
                        m[(c, r)] += h;
                    }
                    let cov = cholesky_exact(&m, 0.0)?;
                    let moved = GaussianComponent::new(comp.mean.clone(), cov)?;
                    eval(&theta.with_component(k, moved)?)
                })?;
                let directional = if r == c {
                    grad.wrt_cov[(r, r)]
                } else {
                    grad.wrt_cov[(r, c)] + grad.wrt_cov[(c, r)]
                };
                worst = worst.max(relative_error(numeric, directional, floor));
            }
        }
    }
    Ok(worst)
}

fn relative_error(numeric: f64, analytic: f64, floor: f64) -> f64 {
    let denom = numeric.abs().max(analytic.abs()).max(floor);
    (numeric - analytic).abs() / denom
}

/// `(f(h) − f(−h)) / 2h`, retrying once with `h/10` if a perturbation leaves
/// the SPD cone.
fn central_difference<F>(step: f64, f: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let attempt = |h: f64| -> Result<f64> { Ok((f(h)? - f(-h)?) / (2.0 * h)) };
    match attempt(step) {
        Err(TamdError::DegenerateCovariance { .. }) => attempt(step * 0.1),
        other => other,
    }
}
