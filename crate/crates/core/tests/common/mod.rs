#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use tamd_core::gaussmath::{cholesky_exact, GaussianComponent, SpdMatrix};
use tamd_core::MixtureParams;

/// SPD matrix `AAᵀ + floor·I` with `A` entries uniform on `[-1, 1]`.
pub fn random_spd<R: Rng>(rng: &mut R, d: usize, floor: f64) -> SpdMatrix {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let dense = &a * a.transpose() + DMatrix::identity(d, d) * floor;
    cholesky_exact(&dense, 0.0).unwrap()
}

pub fn random_component<R: Rng>(rng: &mut R, d: usize, spread: f64) -> GaussianComponent {
    let mean = DVector::from_fn(d, |_, _| rng.random_range(-spread..spread));
    GaussianComponent::new(mean, random_spd(rng, d, 0.3)).unwrap()
}

pub fn random_mixture<R: Rng>(rng: &mut R, k: usize, d: usize, spread: f64) -> MixtureParams {
    let comps = (0..k).map(|_| random_component(rng, d, spread)).collect();
    let w = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    MixtureParams::normalized(w, comps).unwrap()
}

pub fn comp1(mean: f64, var: f64) -> GaussianComponent {
    GaussianComponent::new(DVector::from_element(1, mean), SpdMatrix::scaled_identity(1, var).unwrap()).unwrap()
}

/// Independent density: explicit inverse and determinant from the dense matrix.
pub fn dense_density(x: &[f64], c: &GaussianComponent) -> f64 {
    let s = c.covariance.to_dense();
    let d = x.len();
    let diff = DVector::from_row_slice(x) - &c.mean;
    let inv = s.clone().try_inverse().unwrap();
    let q = (diff.transpose() * inv * &diff)[(0, 0)];
    (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powi(d as i32) * s.determinant()).sqrt()
}

/// Trapezoid rule on `[lo, hi]` with `m` intervals.
pub fn trapezoid_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, m: usize) -> f64 {
    let h = (hi - lo) / m as f64;
    let inner: f64 = (1..m).map(|i| f(lo + h * i as f64)).sum();
    h * (inner + 0.5 * (f(lo) + f(hi)))
}

/// Tensor trapezoid on a square box.
pub fn trapezoid_2d(f: impl Fn(f64, f64) -> f64, lo: [f64; 2], hi: [f64; 2], m: usize) -> f64 {
    let hx = (hi[0] - lo[0]) / m as f64;
    let hy = (hi[1] - lo[1]) / m as f64;
    let mut total = 0.0;
    for i in 0..=m {
        let wx = if i == 0 || i == m { 0.5 } else { 1.0 };
        let x = lo[0] + hx * i as f64;
        for j in 0..=m {
            let wy = if j == 0 || j == m { 0.5 } else { 1.0 };
            total += wx * wy * f(x, lo[1] + hy * j as f64);
        }
    }
    total * hx * hy
}

/// Box covering both components out to `radius` standard deviations.
pub fn covering_box(a: &GaussianComponent, b: &GaussianComponent, radius: f64) -> (Vec<f64>, Vec<f64>) {
    let d = a.dim();
    let (sa, sb) = (a.covariance.to_dense(), b.covariance.to_dense());
    let lo = (0..d)
        .map(|i| (a.mean[i] - radius * sa[(i, i)].sqrt()).min(b.mean[i] - radius * sb[(i, i)].sqrt()))
        .collect();
    let hi = (0..d)
        .map(|i| (a.mean[i] + radius * sa[(i, i)].sqrt()).max(b.mean[i] + radius * sb[(i, i)].sqrt()))
        .collect();
    (lo, hi)
}
