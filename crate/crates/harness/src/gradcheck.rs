//! Randomized finite-difference sweep over penalty gradients.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use tamd_core::affinity::separation;
use tamd_core::barrier_grad::fd_check;
use tamd_core::gaussmath::{cholesky_exact, GaussianComponent};
use tamd_core::simgen::stream_rng;
use tamd_core::{MixtureParams, PenaltyConfig};

pub const FD_STEP: f64 = 1e-5;
pub const PASS_THRESHOLD: f64 = 1e-5;
const DIMS: [usize; 4] = [1, 2, 3, 5];
const KS: [usize; 3] = [2, 3, 4];

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckCase {
    pub index: usize,
    pub d: usize,
    pub k: usize,
    pub lambda_sc: f64,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub cases: Vec<GradcheckCase>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Random configuration `index` of the sweep seeded by `seed`.
pub fn random_config(seed: u64, index: usize) -> (MixtureParams, PenaltyConfig) {
    let mut rng = stream_rng(seed, index as u64);
    let d = DIMS[rng.random_range(0..DIMS.len())];
    let k = KS[rng.random_range(0..KS.len())];
    let cfg = PenaltyConfig {
        lambda_n: 0.1,
        lambda_wt: 1.0,
        lambda_sc: if index % 2 == 0 { 0.0 } else { 0.5 },
        alpha: 0.7,
        beta: 0.3,
        jitter: 1e-6,
    };
    loop {
        let comps: Vec<GaussianComponent> = (0..k)
            .map(|_| {
                let mean = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
                let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
                let cov = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.25;
                GaussianComponent::new(mean, cholesky_exact(&cov, 0.0).expect("shifted Gram matrix is SPD"))
                    .expect("shapes agree")
            })
            .collect();
        let weights = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let theta = MixtureParams::normalized(weights, comps).expect("valid mixture");
        if separation(&theta).map(|s| s > 1e-3).unwrap_or(false) {
            return (theta, cfg);
        }
    }
}

pub fn sweep(seed: u64, configs: usize) -> tamd_core::Result<GradcheckReport> {
    let mut cases = Vec::with_capacity(configs);
    for index in 0..configs {
        let (theta, cfg) = random_config(seed, index);
        let err = fd_check(&theta, &cfg, FD_STEP)?;
        cases.push(GradcheckCase {
            index,
            d: theta.dim(),
            k: theta.k(),
            lambda_sc: cfg.lambda_sc,
            max_rel_error: err,
        });
    }
    let max_rel_error = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        seed,
        cases,
        max_rel_error,
        passed: max_rel_error < PASS_THRESHOLD,
    })
}
