use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TamdError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    /// Factorization failed even after jitter escalation. Carries the
    /// (symmetrized) matrix that could not be factored.
    #[error("covariance is not positive definite after jitter escalation ({} x {})", .matrix.nrows(), .matrix.ncols())]
    DegenerateCovariance { matrix: DMatrix<f64> },

    #[error("barrier domain violated: {0}")]
    BarrierDomain(String),

    #[error("invalid initialization: {0}")]
    InvalidInit(String),

    #[error("invalid data-generating spec: {0}")]
    Spec(String),

    #[error("initialization failed: {0}")]
    Init(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TamdError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(TamdError::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}
