//! Penalized maximum-likelihood estimation of Gaussian mixtures with
//! log-barrier separation, weight and scale penalties, plus a plain EM
//! baseline, synthetic data generators and evaluation metrics.

pub mod affinity;
pub mod barrier_grad;
pub mod em;
pub mod error;
pub mod gaussmath;
pub mod metrics;
pub mod model_json;
pub mod simgen;
pub mod tamd;

pub use affinity::{MixtureParams, PenaltyConfig, PenaltyTerms};
pub use error::{Result, TamdError};
pub use gaussmath::{GaussianComponent, SpdMatrix};
pub use tamd::{FitResult, FitterConfig};
