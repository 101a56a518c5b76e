//! Hellinger affinity between Gaussians, the separation statistic and the
//! log-barrier penalty `R_T` built on top of it.
//!
//! For two Gaussians with `M = (Σ_a + Σ_b)/2` and `δ = μ_a − μ_b`
//!
//! ```text
//! log A = ¼ log|Σ_a| + ¼ log|Σ_b| − ½ log|M| − ⅛ δᵀ M⁻¹ δ
//! ```
//!
//! and the penalty is
//!
//! ```text
//! R_T = Σ_{i<j} −log(1 − A_ij) + λ_wt · (−Σ_k log π_k) + λ_sc · Σ_k (α‖μ_k‖² + β‖Σ_k‖_F²)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result, TamdError};
use crate::gaussmath::{cholesky_exact, log_density_rows, log_sum_exp, GaussianComponent, SpdMatrix};

/// Largest affinity the separation barrier accepts. `1 − A` below
/// `1 − MAX_AFFINITY` is treated as coincident components.
pub const MAX_AFFINITY: f64 = 1.0 - 1e-15;

/// Mixture parameters `θ = (π, μ_{1:K}, Σ_{1:K})`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    weights: Vec<f64>,
    components: Vec<GaussianComponent>,
}

impl MixtureParams {
    /// Validates simplex membership (strictly positive, summing to one within
    /// `1e-12`) and a shared dimension across components.
    pub fn new(weights: Vec<f64>, components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(TamdError::Contract("a mixture needs K >= 1".into()));
        }
        check_dim("weights vs components", components.len(), weights.len())?;
        let dim = components[0].dim();
        for c in &components {
            check_dim("component dimension", dim, c.dim())?;
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(TamdError::Contract(format!(
                "mixture weights must be strictly positive, found {w}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(TamdError::Contract(format!(
                "mixture weights must sum to 1, sum is {total}"
            )));
        }
        Ok(Self {
            weights,
            components,
        })
    }

    /// Like [`MixtureParams::new`] but rescales positive weights onto the simplex first.
    pub fn normalized(weights: Vec<f64>, components: Vec<GaussianComponent>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        let weights = weights.into_iter().map(|w| w / total).collect();
        Self::new(weights, components)
    }

    /// Equal weights.
    pub fn uniform(components: Vec<GaussianComponent>) -> Result<Self> {
        let k = components.len();
        Self::normalized(vec![1.0; k], components)
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn component(&self, k: usize) -> &GaussianComponent {
        &self.components[k]
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<GaussianComponent>) {
        (self.weights, self.components)
    }

    /// Reorders components so that new component `i` is old component `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        check_dim("permutation length", self.k(), order.len())?;
        let mut seen = vec![false; self.k()];
        for &o in order {
            if o >= self.k() || seen[o] {
                return Err(TamdError::Contract(format!("{order:?} is not a permutation")));
            }
            seen[o] = true;
        }
        Ok(Self {
            weights: order.iter().map(|&o| self.weights[o]).collect(),
            components: order.iter().map(|&o| self.components[o].clone()).collect(),
        })
    }

    /// Replaces one component, keeping the weights.
    pub fn with_component(&self, k: usize, comp: GaussianComponent) -> Result<Self> {
        check_dim("replacement component", self.dim(), comp.dim())?;
        let mut out = self.clone();
        out.components[k] = comp;
        Ok(out)
    }

    /// `min_k det Σ_k`.
    pub fn min_covariance_det(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.covariance.det())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Penalty knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    /// Overall schedule value `λ_n`.
    pub lambda_n: f64,
    pub lambda_wt: f64,
    pub lambda_sc: f64,
    /// Coefficient on `‖μ_k‖²` in the scale regularizer.
    pub alpha: f64,
    /// Coefficient on `‖Σ_k‖_F²` in the scale regularizer.
    pub beta: f64,
    /// Covariance stabilization `ε`.
    pub jitter: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            lambda_n: 0.0,
            lambda_wt: 1.0,
            lambda_sc: 0.0,
            alpha: 1.0,
            beta: 1.0,
            jitter: 1e-6,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lambda_n", self.lambda_n),
            ("lambda_wt", self.lambda_wt),
            ("lambda_sc", self.lambda_sc),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TamdError::Contract(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.jitter > 0.0 && self.jitter.is_finite()) {
            return Err(TamdError::Contract(format!("jitter must be > 0, got {}", self.jitter)));
        }
        Ok(())
    }
}

/// Pieces shared by the affinity and its gradient.
#[derive(Debug, Clone)]
pub(crate) struct AffinityParts {
    pub log_affinity: f64,
    pub m: SpdMatrix,
    pub delta: DVector<f64>,
    pub m_inverse_delta: DVector<f64>,
}

pub(crate) fn affinity_parts(a: &GaussianComponent, b: &GaussianComponent) -> Result<AffinityParts> {
    check_dim("affinity operands", a.dim(), b.dim())?;
    let dense = (a.covariance.to_dense() + b.covariance.to_dense()) * 0.5;
    let m = cholesky_exact(&dense, 0.0)?;
    let delta = &a.mean - &b.mean;
    let m_inverse_delta = m.solve(&delta);
    let quad = delta.dot(&m_inverse_delta);
    let log_affinity = 0.25 * a.covariance.log_det() + 0.25 * b.covariance.log_det()
        - 0.5 * m.log_det()
        - 0.125 * quad;
    Ok(AffinityParts {
        log_affinity: log_affinity.min(0.0),
        m,
        delta,
        m_inverse_delta,
    })
}

/// `log A(a, b)`, clamped to `≤ 0`.
pub fn log_hellinger_affinity(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    affinity_parts(a, b).map(|p| p.log_affinity)
}

/// Closed-form Hellinger affinity `∫√(f_a f_b)`, in `[0, 1]`.
pub fn hellinger_affinity(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    Ok(log_hellinger_affinity(a, b)?.exp().clamp(0.0, 1.0))
}

/// `1 − A` computed from `log A` without cancellation.
pub(crate) fn one_minus_affinity(log_affinity: f64) -> f64 {
    -log_affinity.exp_m1()
}

/// `Δ(θ) = min_{i<j} (1 − A_ij)`. Returns `1.0` for `K < 2`, where there is no pair.
pub fn separation(theta: &MixtureParams) -> Result<f64> {
    let comps = theta.components();
    let mut best: f64 = 1.0;
    for i in 0..comps.len() {
        for j in (i + 1)..comps.len() {
            let la = log_hellinger_affinity(&comps[i], &comps[j])?;
            best = best.min(one_minus_affinity(la).clamp(0.0, 1.0));
        }
    }
    Ok(best)
}

/// `R_T` and its three addends (unweighted).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyTerms {
    /// `Σ_{i<j} −log(1 − A_ij)`.
    pub separation: f64,
    /// `−Σ_k log π_k`.
    pub weight: f64,
    /// `Σ_k α‖μ_k‖² + β‖Σ_k‖_F²`.
    pub scale: f64,
    /// `separation + λ_wt·weight + λ_sc·scale`.
    pub total: f64,
}

/// Separation barrier for a single pair.
pub(crate) fn pair_barrier(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    let la = log_hellinger_affinity(a, b)?;
    let gap = one_minus_affinity(la);
    if !(gap > 1.0 - MAX_AFFINITY) {
        return Err(TamdError::BarrierDomain(format!(
            "components coincide (1 - A = {gap:e})"
        )));
    }
    Ok(-gap.ln())
}

pub(crate) fn scale_regularizer(comp: &GaussianComponent, cfg: &PenaltyConfig) -> f64 {
    let mut v = 0.0;
    if cfg.alpha != 0.0 {
        v += cfg.alpha * comp.mean.norm_squared();
    }
    if cfg.beta != 0.0 {
        v += cfg.beta * comp.covariance.to_dense().norm_squared();
    }
    v
}

/// Evaluates the transcendental penalty `R_T(θ)`.
pub fn penalty(theta: &MixtureParams, cfg: &PenaltyConfig) -> Result<PenaltyTerms> {
    let comps = theta.components();
    let mut separation = 0.0;
    for i in 0..comps.len() {
        for j in (i + 1)..comps.len() {
            separation += pair_barrier(&comps[i], &comps[j])?;
        }
    }
    let mut weight = 0.0;
    for &w in theta.weights() {
        if !(w > 0.0) {
            return Err(TamdError::BarrierDomain(format!("mixture weight {w} is not positive")));
        }
        weight -= w.ln();
    }
    let scale = if cfg.lambda_sc != 0.0 {
        comps.iter().map(|c| scale_regularizer(c, cfg)).sum()
    } else {
        0.0
    };
    let total = separation + cfg.lambda_wt * weight + cfg.lambda_sc * scale;
    Ok(PenaltyTerms {
        separation,
        weight,
        scale,
        total,
    })
}

/// Per-point log joint densities `log π_k + log f(x_i; η_k)` as an `n×K` matrix.
pub fn log_joint(data: &DMatrix<f64>, theta: &MixtureParams) -> Result<DMatrix<f64>> {
    let n = data.nrows();
    let mut out = DMatrix::zeros(n, theta.k());
    for (k, comp) in theta.components().iter().enumerate() {
        let lw = theta.weights()[k].ln();
        let col = log_density_rows(data, comp)?;
        for i in 0..n {
            out[(i, k)] = lw + col[i];
        }
    }
    Ok(out)
}

/// Per-point mixture log-density `log p_θ(x_i)`.
pub fn mixture_log_density_rows(data: &DMatrix<f64>, theta: &MixtureParams) -> Result<DVector<f64>> {
    let joint = log_joint(data, theta)?;
    let mut out = DVector::zeros(data.nrows());
    let mut row = vec![0.0; theta.k()];
    for i in 0..data.nrows() {
        for (k, slot) in row.iter_mut().enumerate() {
            *slot = joint[(i, k)];
        }
        out[i] = log_sum_exp(&row)?;
    }
    Ok(out)
}

/// `(1/n) Σ_i log p_θ(X_i)`.
pub fn mean_log_likelihood(data: &DMatrix<f64>, theta: &MixtureParams) -> Result<f64> {
    if data.nrows() == 0 {
        return Err(TamdError::Contract("empty data".into()));
    }
    Ok(mixture_log_density_rows(data, theta)?.mean())
}

/// `J_n(θ) = (1/n) Σ_i log p_θ(X_i) − λ_n R_T(θ)`.
///
/// With `λ_n = 0` the penalty is not evaluated at all, so the barrier domain
/// is not required.
pub fn objective(data: &DMatrix<f64>, theta: &MixtureParams, cfg: &PenaltyConfig) -> Result<f64> {
    let ll = mean_log_likelihood(data, theta)?;
    if cfg.lambda_n == 0.0 {
        return Ok(ll);
    }
    Ok(ll - cfg.lambda_n * penalty(theta, cfg)?.total)
}
