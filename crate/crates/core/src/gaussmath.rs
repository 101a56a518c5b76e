//! Multivariate Gaussian primitives: Cholesky-backed SPD matrices, log-densities
//! and a max-shifted log-sum-exp.
//!
//! Covariances are kept as lower Cholesky factors throughout the crate; dense
//! matrices are only materialized at module boundaries (serialization,
//! interpolation, reporting).

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{check_dim, Result, TamdError};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Symmetric positive definite matrix stored as its lower Cholesky factor
/// `L` with `Σ = L·Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    lower: DMatrix<f64>,
}

impl SpdMatrix {
    /// Wraps an existing lower factor. The strict upper triangle is ignored.
    pub fn from_factor(factor: DMatrix<f64>) -> Result<Self> {
        if !factor.is_square() {
            return Err(TamdError::Contract(format!(
                "cholesky factor must be square, got {}x{}",
                factor.nrows(),
                factor.ncols()
            )));
        }
        if factor.nrows() == 0 {
            return Err(TamdError::Contract("empty covariance".into()));
        }
        let lower = factor.lower_triangle();
        if lower.diagonal().iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(TamdError::DegenerateCovariance {
                matrix: &lower * lower.transpose(),
            });
        }
        Ok(Self { lower })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            lower: DMatrix::identity(dim, dim),
        }
    }

    /// `scale · I`, `scale > 0`.
    pub fn scaled_identity(dim: usize, scale: f64) -> Result<Self> {
        Self::from_factor(DMatrix::identity(dim, dim) * scale.sqrt())
    }

    /// Factors a dense symmetric matrix; see [`cholesky`].
    pub fn from_dense(dense: &DMatrix<f64>, jitter: f64) -> Result<Self> {
        cholesky(dense, jitter)
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn det(&self) -> f64 {
        self.log_det().exp()
    }

    /// Reconstructs `L·Lᵀ`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = &self.lower * self.lower.transpose();
        symmetrize_in_place(&mut m);
        m
    }

    pub fn trace(&self) -> f64 {
        self.lower.iter().map(|v| v * v).sum()
    }

    /// Frobenius norm of the reconstructed matrix `L·Lᵀ`.
    pub fn frobenius_norm(&self) -> f64 {
        self.to_dense().norm()
    }

    /// `L⁻¹ v`.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        self.lower
            .solve_lower_triangular(v)
            .expect("cholesky factor has a positive diagonal")
    }

    /// `Σ⁻¹ v` via two triangular solves.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let y = self.whiten(v);
        self.lower
            .tr_solve_lower_triangular(&y)
            .expect("cholesky factor has a positive diagonal")
    }

    /// Dense `Σ⁻¹`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let d = self.dim();
        let linv = self
            .lower
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .expect("cholesky factor has a positive diagonal");
        let mut inv = linv.transpose() * linv;
        symmetrize_in_place(&mut inv);
        inv
    }

    /// `vᵀ Σ⁻¹ v`.
    pub fn mahalanobis_sq(&self, v: &DVector<f64>) -> f64 {
        self.whiten(v).norm_squared()
    }
}

/// A single Gaussian component `N(mean, covariance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub mean: DVector<f64>,
    pub covariance: SpdMatrix,
}

impl GaussianComponent {
    pub fn new(mean: DVector<f64>, covariance: SpdMatrix) -> Result<Self> {
        check_dim("component mean vs covariance", covariance.dim(), mean.len())?;
        Ok(Self { mean, covariance })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            covariance: SpdMatrix::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Replaces `m` by `(m + mᵀ)/2`.
pub fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Factors `(A + Aᵀ)/2 + jitter·I`.
///
/// On failure the jitter is escalated ×10 (starting from `1e-12·trace/d`
/// when `jitter == 0`) until it would exceed `max(jitter, 1e-2·trace/d)`.
pub fn cholesky(dense: &DMatrix<f64>, jitter: f64) -> Result<SpdMatrix> {
    cholesky_with_cap(dense, jitter, None)
}

/// Factors `(A + Aᵀ)/2 + jitter·I` with no escalation.
pub fn cholesky_exact(dense: &DMatrix<f64>, jitter: f64) -> Result<SpdMatrix> {
    cholesky_with_cap(dense, jitter, Some(jitter))
}

/// [`cholesky`] with an explicit escalation cap (`None` = `max(jitter, 1e-2·trace/d)`).
pub fn cholesky_with_cap(dense: &DMatrix<f64>, jitter: f64, cap: Option<f64>) -> Result<SpdMatrix> {
    if !dense.is_square() || dense.nrows() == 0 {
        return Err(TamdError::Contract(format!(
            "cholesky needs a non-empty square matrix, got {}x{}",
            dense.nrows(),
            dense.ncols()
        )));
    }
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(TamdError::Contract(format!("jitter must be >= 0, got {jitter}")));
    }
    let mut sym = dense.clone();
    symmetrize_in_place(&mut sym);
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(TamdError::DegenerateCovariance { matrix: sym });
    }

    let d = sym.nrows();
    let mean_diag = sym.trace() / d as f64;
    let cap = cap.unwrap_or(jitter.max(1e-2 * mean_diag));
    let mut current = jitter;
    loop {
        let mut shifted = sym.clone();
        for i in 0..d {
            shifted[(i, i)] += current;
        }
        if let Some(ch) = Cholesky::new(shifted) {
            let lower = ch.unpack();
            if lower.diagonal().iter().all(|&v| v > 0.0 && v.is_finite()) {
                return Ok(SpdMatrix { lower });
            }
        }
        let next = if current == 0.0 {
            1e-12 * mean_diag.max(f64::MIN_POSITIVE)
        } else {
            current * 10.0
        };
        if !(next <= cap) || next == current {
            return Err(TamdError::DegenerateCovariance { matrix: sym });
        }
        current = next;
    }
}

/// `log N(x; μ, Σ)`.
pub fn log_density(x: &DVector<f64>, comp: &GaussianComponent) -> Result<f64> {
    check_dim("log_density point", comp.dim(), x.len())?;
    let d = comp.dim() as f64;
    let maha = comp.covariance.mahalanobis_sq(&(x - &comp.mean));
    Ok(-0.5 * (d * LN_2PI + comp.covariance.log_det() + maha))
}

/// `log N(x_i; μ, Σ)` for every row `x_i` of an `n×d` data matrix.
pub fn log_density_rows(data: &DMatrix<f64>, comp: &GaussianComponent) -> Result<DVector<f64>> {
    check_dim("data columns", comp.dim(), data.ncols())?;
    let d = comp.dim();
    let n = data.nrows();
    let mut centered = data.transpose();
    for i in 0..n {
        for r in 0..d {
            centered[(r, i)] -= comp.mean[r];
        }
    }
    comp.covariance
        .factor()
        .solve_lower_triangular_mut(&mut centered);
    let constant = -0.5 * (d as f64 * LN_2PI + comp.covariance.log_det());
    Ok(DVector::from_iterator(
        n,
        centered
            .column_iter()
            .map(|z| constant - 0.5 * z.norm_squared()),
    ))
}

/// `log Σ exp(v_i)` with max-shift.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    let max = values
        .iter()
        .copied()
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        .ok_or_else(|| TamdError::Contract("log_sum_exp of an empty slice".into()))?;
    if !max.is_finite() {
        return Ok(max);
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}
