//! Evaluation metrics: degeneracy flag, label-matched parameter errors,
//! Hellinger distance to truth, adjusted Rand index, held-out likelihood.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::affinity::{log_joint, mean_log_likelihood, mixture_log_density_rows, MixtureParams};
use crate::error::{check_dim, Result, TamdError};
use crate::tamd::DEGENERACY_DET_THRESHOLD;

/// Up to this many components the assignment is found by enumeration,
/// which gives the lexicographic tie-break for free.
const ENUMERATION_MAX_K: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub success: bool,
    pub mean_mse: f64,
    pub cov_frobenius_error: f64,
    pub hellinger_to_truth: f64,
    pub hellinger_se: f64,
    pub ari: f64,
    pub accuracy: f64,
    pub heldout_loglik: f64,
    pub matching: Vec<usize>,
}

/// `min_k det Σ̂_k > 1e-6`.
pub fn is_success(est: &MixtureParams) -> bool {
    est.min_covariance_det() > DEGENERACY_DET_THRESHOLD
}

fn check_same_shape(est: &MixtureParams, truth: &MixtureParams) -> Result<()> {
    check_dim("component count", truth.k(), est.k())?;
    check_dim("dimension", truth.dim(), est.dim())
}

fn mean_cost(est: &MixtureParams, truth: &MixtureParams) -> DMatrix<f64> {
    let k = truth.k();
    DMatrix::from_fn(k, k, |t, e| {
        (&est.component(e).mean - &truth.component(t).mean).norm_squared()
    })
}

/// Optimal assignment of estimated to true components under squared mean
/// distance. Entry `k` of the result is the estimated index matched to true
/// component `k`. Ties go to the lexicographically smallest permutation.
pub fn match_labels(est: &MixtureParams, truth: &MixtureParams) -> Result<Vec<usize>> {
    check_same_shape(est, truth)?;
    let cost = mean_cost(est, truth);
    if truth.k() <= ENUMERATION_MAX_K {
        Ok(enumerate_assignment(&cost))
    } else {
        Ok(hungarian(&cost))
    }
}

fn assignment_cost(cost: &DMatrix<f64>, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(t, &e)| cost[(t, e)]).sum()
}

fn enumerate_assignment(cost: &DMatrix<f64>) -> Vec<usize> {
    let k = cost.nrows();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = perm.clone();
    let mut best_cost = assignment_cost(cost, &perm);
    while next_permutation(&mut perm) {
        let c = assignment_cost(cost, &perm);
        if c < best_cost {
            best_cost = c;
            best.copy_from_slice(&perm);
        }
    }
    best
}

/// Advances to the next permutation in lexicographic order.
fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = p.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = p.iter().rposition(|&v| v > p[i]).expect("pivot has a successor");
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}

/// Shortest augmenting path Hungarian algorithm on a square cost matrix.
fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    // 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let cur = cost[(r0 - 1, col - 1)] - u[r0] - v[col];
                if cur < minv[col] {
                    minv[col] = cur;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for col in 1..=n {
        perm[owner[col] - 1] = col - 1;
    }
    perm
}

/// `(1/K)Σ‖μ̂_σ(k) − μ_k‖²` and `(1/K)Σ‖Σ̂_σ(k) − Σ_k‖_F` under `matching`.
pub fn parameter_errors(
    est: &MixtureParams,
    truth: &MixtureParams,
    matching: &[usize],
) -> Result<(f64, f64)> {
    check_same_shape(est, truth)?;
    check_dim("matching length", truth.k(), matching.len())?;
    let k = truth.k() as f64;
    let mut mse = 0.0;
    let mut cov = 0.0;
    for (t, &e) in matching.iter().enumerate() {
        let (a, b) = (est.component(e), truth.component(t));
        mse += (&a.mean - &b.mean).norm_squared();
        cov += (a.covariance.to_dense() - b.covariance.to_dense()).norm();
    }
    Ok((mse / k, cov / k))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HellingerEstimate {
    pub distance: f64,
    /// Estimate of `H²` before clamping at zero.
    pub squared: f64,
    /// Standard error of `squared`.
    pub se_squared: f64,
}

fn sample_mixture<R: Rng + ?Sized>(theta: &MixtureParams, rng: &mut R) -> DVector<f64> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut pick = theta.k() - 1;
    for (j, w) in theta.weights().iter().enumerate() {
        acc += w;
        if u < acc {
            pick = j;
            break;
        }
    }
    let c = theta.component(pick);
    let z = DVector::from_iterator(c.dim(), (0..c.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    &c.mean + c.covariance.factor() * z
}

/// Hellinger distance by importance sampling from `(p + q)/2`:
/// `H² ≈ 1 − mean √(p q) / ((p + q)/2)`. The summand lies in `[0, 1]`, so
/// the variance is bounded however little `p` and `q` overlap.
pub fn hellinger_mc<R: Rng + ?Sized>(
    p: &MixtureParams,
    q: &MixtureParams,
    draws: usize,
    rng: &mut R,
) -> Result<HellingerEstimate> {
    check_dim("dimension", p.dim(), q.dim())?;
    if draws < 2 {
        return Err(TamdError::Contract(format!("hellinger_mc needs >= 2 draws, got {draws}")));
    }
    let d = p.dim();
    let mut xs = DMatrix::zeros(draws, d);
    for i in 0..draws {
        let x = if rng.random::<bool>() {
            sample_mixture(p, rng)
        } else {
            sample_mixture(q, rng)
        };
        xs.row_mut(i).copy_from(&x.transpose());
    }
    let lp = mixture_log_density_rows(&xs, p)?;
    let lq = mixture_log_density_rows(&xs, q)?;
    let ratios: Vec<f64> = lp
        .iter()
        .zip(lq.iter())
        .map(|(&a, &b)| {
            let hi = a.max(b);
            if hi == f64::NEG_INFINITY {
                return 0.0;
            }
            // 2√(pq)/(p+q) in log space
            let lse = hi + ((a - hi).exp() + (b - hi).exp()).ln();
            (std::f64::consts::LN_2 + 0.5 * (a + b) - lse).exp()
        })
        .collect();
    let m = draws as f64;
    let mean = ratios.iter().sum::<f64>() / m;
    let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let squared = 1.0 - mean;
    Ok(HellingerEstimate {
        distance: squared.max(0.0).sqrt(),
        squared,
        se_squared: (var / m).sqrt(),
    })
}

fn choose2(n: u64) -> f64 {
    (n as f64) * (n.saturating_sub(1) as f64) / 2.0
}

/// Adjusted Rand index. Positions where either label is negative are
/// dropped from both partitions.
pub fn adjusted_rand_index(a: &[i64], b: &[i64]) -> Result<f64> {
    check_dim("label vector length", a.len(), b.len())?;
    let mut table: BTreeMap<(i64, i64), u64> = BTreeMap::new();
    let mut rows: BTreeMap<i64, u64> = BTreeMap::new();
    let mut cols: BTreeMap<i64, u64> = BTreeMap::new();
    let mut n = 0u64;
    for (&x, &y) in a.iter().zip(b) {
        if x < 0 || y < 0 {
            continue;
        }
        n += 1;
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    if n < 2 {
        return Err(TamdError::Contract(format!(
            "adjusted Rand index needs >= 2 labelled points, got {n}"
        )));
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sa: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sb: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sa * sb / choose2(n);
    let max = 0.5 * (sa + sb);
    if max == expected {
        // both partitions trivial in the same way (all singletons or one block)
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// MAP assignment: argmax of `log π_k + log f_k(x)` per row.
pub fn map_labels(data: &DMatrix<f64>, est: &MixtureParams) -> Result<Vec<usize>> {
    let lj = log_joint(data, est)?;
    Ok(lj.row_iter().map(|row| row.transpose().argmax().0).collect())
}

/// Fraction of non-negative true labels whose MAP component is matched to
/// them by `matching` (as returned by [`match_labels`]).
pub fn classification_accuracy(predicted: &[usize], truth: &[i64], matching: &[usize]) -> Result<f64> {
    check_dim("label vector length", truth.len(), predicted.len())?;
    let mut hits = 0usize;
    let mut total = 0usize;
    for (&p, &t) in predicted.iter().zip(truth) {
        if t < 0 {
            continue;
        }
        let t = t as usize;
        if t >= matching.len() {
            return Err(TamdError::Contract(format!("true label {t} outside matching")));
        }
        total += 1;
        hits += usize::from(matching[t] == p);
    }
    if total == 0 {
        return Err(TamdError::Contract("no labelled points for accuracy".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Mean per-point mixture log-density on held-out data.
pub fn heldout_loglik(test: &DMatrix<f64>, est: &MixtureParams) -> Result<f64> {
    mean_log_likelihood(test, est)
}

/// Everything [`evaluate`] needs besides the two mixtures.
#[derive(Debug, Clone, Copy)]
pub struct EvalData<'a> {
    pub train: &'a DMatrix<f64>,
    pub train_labels: &'a [i64],
    pub heldout: &'a DMatrix<f64>,
    pub hellinger_draws: usize,
}

/// Full report for one fitted model. ARI and accuracy use MAP labels on the
/// training sample.
pub fn evaluate<R: Rng + ?Sized>(
    est: &MixtureParams,
    truth: &MixtureParams,
    data: &EvalData<'_>,
    rng: &mut R,
) -> Result<MetricsReport> {
    let matching = match_labels(est, truth)?;
    let (mean_mse, cov_frobenius_error) = parameter_errors(est, truth, &matching)?;
    let h = hellinger_mc(est, truth, data.hellinger_draws, rng)?;
    let predicted = map_labels(data.train, est)?;
    let as_i64: Vec<i64> = predicted.iter().map(|&p| p as i64).collect();
    let ari = adjusted_rand_index(&as_i64, data.train_labels)?;
    let accuracy = classification_accuracy(&predicted, data.train_labels, &matching)?;
    Ok(MetricsReport {
        success: is_success(est),
        mean_mse,
        cov_frobenius_error,
        hellinger_to_truth: h.distance,
        hellinger_se: h.se_squared,
        ari,
        accuracy,
        heldout_loglik: heldout_loglik(data.heldout, est)?,
        matching,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussmath::{GaussianComponent, SpdMatrix};
    use crate::simgen::stream_rng;
    use approx::assert_relative_eq;

    fn point_mixture(means: &[&[f64]]) -> MixtureParams {
        let comps = means
            .iter()
            .map(|m| GaussianComponent::new(DVector::from_row_slice(m), SpdMatrix::identity(m.len())).unwrap())
            .collect();
        MixtureParams::uniform(comps).unwrap()
    }

    #[test]
    fn identity_and_swap_matching() {
        let t = point_mixture(&[&[0.0, 0.0], &[5.0, 0.0], &[0.0, 5.0]]);
        assert_eq!(match_labels(&t, &t).unwrap(), vec![0, 1, 2]);
        let swapped = t.permuted(&[1, 0, 2]).unwrap();
        let m = match_labels(&swapped, &t).unwrap();
        assert_eq!(m, vec![1, 0, 2]);
        assert_eq!(parameter_errors(&swapped, &t, &m).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn hungarian_agrees_with_enumeration() {
        let mut rng = stream_rng(11, 0);
        for k in 1..=7 {
            for _ in 0..20 {
                let cost = DMatrix::from_fn(k, k, |_, _| rng.random::<f64>());
                let a = enumerate_assignment(&cost);
                let b = hungarian(&cost);
                assert_relative_eq!(assignment_cost(&cost, &a), assignment_cost(&cost, &b), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn ties_break_lexicographically() {
        let t = point_mixture(&[&[0.0], &[1.0]]);
        let e = point_mixture(&[&[0.5], &[0.5]]);
        assert_eq!(match_labels(&e, &t).unwrap(), vec![0, 1]);
    }

    #[test]
    fn parameter_error_values() {
        let t = point_mixture(&[&[0.0, 0.0, 0.0]]);
        let e = point_mixture(&[&[1.0, 0.0, 0.0]]);
        assert_eq!(parameter_errors(&e, &t, &[0]).unwrap().0, 1.0);

        let t = point_mixture(&[&[0.0, 0.0]]);
        let two = GaussianComponent::new(DVector::zeros(2), SpdMatrix::scaled_identity(2, 2.0).unwrap()).unwrap();
        let e = MixtureParams::uniform(vec![two]).unwrap();
        assert_relative_eq!(parameter_errors(&e, &t, &[0]).unwrap().1, 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn k_mismatch_is_rejected() {
        let a = point_mixture(&[&[0.0], &[1.0]]);
        let b = point_mixture(&[&[0.0]]);
        assert!(match_labels(&a, &b).is_err());
    }

    #[test]
    fn ari_cases() {
        let a = [0, 0, 1, 1, 2, 2];
        assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
        assert_relative_eq!(adjusted_rand_index(&a, &[2, 2, 0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0; 6], &[0, 0, 0, 1, 1, 1]).unwrap(), 0.0);
        assert!(adjusted_rand_index(&[0, -1], &[0, 1]).is_err());
        // contaminants are masked out
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1, 5], &[1, 1, 0, 0, -1]).unwrap(), 1.0);
    }

    #[test]
    fn hellinger_limits() {
        let p = point_mixture(&[&[0.0], &[3.0]]);
        let mut rng = stream_rng(3, 3);
        let same = hellinger_mc(&p, &p, 10_000, &mut rng).unwrap();
        assert!(same.distance < 1e-6, "{same:?}");
        let far = point_mixture(&[&[1e4], &[1e4 + 3.0]]);
        let h = hellinger_mc(&p, &far, 10_000, &mut rng).unwrap();
        assert!((1.0 - h.distance).abs() < 1e-3);
    }

    #[test]
    fn hellinger_two_gaussians() {
        let p = point_mixture(&[&[0.0]]);
        let q = point_mixture(&[&[2.0]]);
        let h = hellinger_mc(&p, &q, 40_000, &mut stream_rng(5, 3)).unwrap();
        let exact = 1.0 - (-0.5f64).exp();
        assert!((h.squared - exact).abs() < 4.0 * h.se_squared, "{h:?} vs {exact}");
    }

    #[test]
    fn accuracy_uses_matching() {
        // estimated component 1 corresponds to true label 0
        let acc = classification_accuracy(&[1, 1, 0, 0], &[0, 0, 1, -1], &[1, 0]).unwrap();
        assert_eq!(acc, 1.0);
        let acc = classification_accuracy(&[0, 1, 0], &[0, 0, 1], &[1, 0]).unwrap();
        assert_relative_eq!(acc, 2.0 / 3.0);
    }

    #[test]
    fn success_threshold() {
        let tiny = |v: f64| {
            let c = GaussianComponent::new(DVector::zeros(1), SpdMatrix::scaled_identity(1, v).unwrap()).unwrap();
            point_mixture(&[&[5.0]]).with_component(0, c).unwrap()
        };
        assert!(!is_success(&tiny(1e-7)));
        assert!(!is_success(&tiny(5e-7)));
        assert!(is_success(&tiny(2e-6)));
        assert!(is_success(&point_mixture(&[&[0.0]])));
    }
}
