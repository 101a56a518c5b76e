//! Seeded synthetic mixtures and random initializers.
//!
//! Randomness comes from ChaCha8 with a 64-bit seed and a stream id. The
//! generator is counter based, so every (seed, stream) pair is an
//! independent, reproducible sequence regardless of which thread draws it.
//! Stream ids in use are listed in [`streams`].
//!
//! "Separation δ" is the minimum pairwise Euclidean distance between true
//! means, which are placed at the vertices of a regular simplex.

use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand::SeedableRng;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::affinity::{separation, MixtureParams};
use crate::error::{Result, TamdError};
use crate::gaussmath::{cholesky, GaussianComponent, SpdMatrix};

/// Stream ids for [`stream_rng`].
pub mod streams {
    /// Training sample.
    pub const DATA: u64 = 0;
    /// Held-out sample.
    pub const HELDOUT: u64 = 1;
    /// Initializer draws.
    pub const INIT: u64 = 2;
    /// Monte Carlo metrics.
    pub const METRICS: u64 = 3;
    /// EM restarts beyond the shared initialization.
    pub const RESTARTS: u64 = 4;
}

/// A ChaCha8 generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    WellSpecified,
    IllConditioned,
    Contaminated,
    HighDim,
}

impl DgpKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DgpKind::WellSpecified => "well_specified",
            DgpKind::IllConditioned => "ill_conditioned",
            DgpKind::Contaminated => "contaminated",
            DgpKind::HighDim => "high_dim",
        }
    }
}

impl FromStr for DgpKind {
    type Err = TamdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "well_specified" => Ok(DgpKind::WellSpecified),
            "ill_conditioned" => Ok(DgpKind::IllConditioned),
            "contaminated" => Ok(DgpKind::Contaminated),
            "high_dim" => Ok(DgpKind::HighDim),
            other => Err(TamdError::Spec(format!("unknown dgp kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for DgpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One data-generating process.
///
/// All kinds share the construction: simplex means at separation `δ`,
/// diagonal covariances with condition number `κ` (identity when `κ = 1`),
/// equal weights, and an `ε` fraction of uniform contaminants. `kind`
/// decides which of `κ` and `ε` may differ from their neutral values:
/// `well_specified` needs `κ = 1, ε = 0`; `ill_conditioned` needs `ε = 0`;
/// `contaminated` allows both; `high_dim` needs `κ = 1` and allows `ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub n: usize,
    pub d: usize,
    pub k_true: usize,
    pub separation_delta: f64,
    pub condition_kappa: f64,
    pub contamination_eps: f64,
    pub seed: u64,
}

impl DgpSpec {
    pub fn well_specified(n: usize, d: usize, k_true: usize, delta: f64, seed: u64) -> Self {
        Self {
            kind: DgpKind::WellSpecified,
            n,
            d,
            k_true,
            separation_delta: delta,
            condition_kappa: 1.0,
            contamination_eps: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(TamdError::Spec(m));
        if self.n == 0 || self.d == 0 || self.k_true == 0 {
            return err(format!(
                "n, d and k must be positive (n={}, d={}, k={})",
                self.n, self.d, self.k_true
            ));
        }
        if self.d + 1 < self.k_true {
            return err(format!(
                "{} simplex means need d >= {}, got d = {}",
                self.k_true,
                self.k_true - 1,
                self.d
            ));
        }
        if !(self.separation_delta > 0.0 && self.separation_delta.is_finite()) {
            return err(format!("separation delta must be > 0, got {}", self.separation_delta));
        }
        if !(self.condition_kappa >= 1.0 && self.condition_kappa.is_finite()) {
            return err(format!("condition kappa must be >= 1, got {}", self.condition_kappa));
        }
        if self.condition_kappa > 1.0 && self.d < 2 {
            return err("a condition number above 1 needs d >= 2".into());
        }
        if !(self.contamination_eps >= 0.0 && self.contamination_eps < 0.5) {
            return err(format!(
                "contamination eps must be in [0, 0.5), got {}",
                self.contamination_eps
            ));
        }
        let kappa_free = matches!(self.kind, DgpKind::IllConditioned | DgpKind::Contaminated);
        let eps_free = matches!(self.kind, DgpKind::Contaminated | DgpKind::HighDim);
        if !kappa_free && self.condition_kappa != 1.0 {
            return err(format!("kind {} requires kappa = 1", self.kind));
        }
        if !eps_free && self.contamination_eps != 0.0 {
            return err(format!("kind {} requires eps = 0", self.kind));
        }
        Ok(())
    }
}

/// Generated data with ground truth. Contaminant rows carry label `-1`.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub data: DMatrix<f64>,
    pub labels: Vec<i64>,
    pub truth: MixtureParams,
}

impl LabeledSample {
    pub fn contaminant_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l < 0).count()
    }
}

/// `K` points in `ℝ^d` with all pairwise distances equal to `delta`,
/// centred at the origin. Requires `d ≥ K − 1`.
pub fn simplex_means(k: usize, d: usize, delta: f64) -> Result<Vec<DVector<f64>>> {
    if k == 0 || d + 1 < k {
        return Err(TamdError::Spec(format!("cannot place {k} simplex vertices in {d} dimensions")));
    }
    // scaled basis vectors e_i·δ/√2 are pairwise δ apart in ℝ^K; centre them
    // and express them in the Helmert basis of the sum-zero hyperplane
    let scale = delta / std::f64::consts::SQRT_2;
    let centre = scale / k as f64;
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let vertex: Vec<f64> = (0..k)
            .map(|j| if j == i { scale - centre } else { -centre })
            .collect();
        let mut coords = DVector::zeros(d);
        for h in 1..k {
            // h-th Helmert vector: (1,…,1, −h, 0,…)/√(h(h+1)) with h ones
            let norm = ((h * (h + 1)) as f64).sqrt();
            let dot: f64 = vertex[..h].iter().sum::<f64>() - h as f64 * vertex[h];
            coords[h - 1] = dot / norm;
        }
        out.push(coords);
    }
    Ok(out)
}

/// Diagonal covariance with eigenvalues log-spaced on `[κ^{-1/2}, κ^{1/2}]`.
pub fn conditioned_covariance(d: usize, kappa: f64) -> Result<SpdMatrix> {
    if d == 1 || kappa == 1.0 {
        return Ok(SpdMatrix::identity(d));
    }
    let half = kappa.ln() / 2.0;
    let diag = DVector::from_iterator(
        d,
        (0..d).map(|i| (-half + 2.0 * half * i as f64 / (d - 1) as f64).exp().sqrt()),
    );
    SpdMatrix::from_factor(DMatrix::from_diagonal(&diag))
}

/// The generating mixture `θ₀` for a spec.
pub fn truth_for(spec: &DgpSpec) -> Result<MixtureParams> {
    spec.validate()?;
    let cov = conditioned_covariance(spec.d, spec.condition_kappa)?;
    let comps = simplex_means(spec.k_true, spec.d, spec.separation_delta)?
        .into_iter()
        .map(|m| GaussianComponent::new(m, cov.clone()))
        .collect::<Result<Vec<_>>>()?;
    MixtureParams::uniform(comps)
}

/// Draws the sample for `spec` on the [`streams::DATA`] stream.
pub fn generate(spec: &DgpSpec) -> Result<LabeledSample> {
    generate_on_stream(spec, streams::DATA)
}

/// Draws the sample for `spec` on an explicit stream.
pub fn generate_on_stream(spec: &DgpSpec, stream: u64) -> Result<LabeledSample> {
    let truth = truth_for(spec)?;
    let mut rng = stream_rng(spec.seed, stream);
    let (n, d, k) = (spec.n, spec.d, spec.k_true);

    let labels: Vec<i64> = (0..n)
        .map(|_| {
            if spec.contamination_eps > 0.0 && rng.random::<f64>() < spec.contamination_eps {
                -1
            } else {
                rng.random_range(0..k) as i64
            }
        })
        .collect();

    let mut data = DMatrix::zeros(n, d);
    for (i, &label) in labels.iter().enumerate() {
        if label < 0 {
            continue;
        }
        let comp = truth.component(label as usize);
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let x = &comp.mean + comp.covariance.factor() * z;
        data.row_mut(i).copy_from(&x.transpose());
    }

    if labels.iter().any(|&l| l < 0) {
        let (lo, hi) = contamination_box(&data, &labels, &truth);
        for (i, _) in labels.iter().enumerate().filter(|(_, &l)| l < 0) {
            for c in 0..d {
                data[(i, c)] = rng.random_range(lo[c]..=hi[c]);
            }
        }
    }

    Ok(LabeledSample {
        data,
        labels,
        truth,
    })
}

/// Bounding box of the clean rows, inflated ×3 about its centre.
fn contamination_box(data: &DMatrix<f64>, labels: &[i64], truth: &MixtureParams) -> (Vec<f64>, Vec<f64>) {
    let d = data.ncols();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    let mut any = false;
    for (i, _) in labels.iter().enumerate().filter(|(_, &l)| l >= 0) {
        any = true;
        for c in 0..d {
            lo[c] = lo[c].min(data[(i, c)]);
            hi[c] = hi[c].max(data[(i, c)]);
        }
    }
    if !any {
        for comp in truth.components() {
            for c in 0..d {
                lo[c] = lo[c].min(comp.mean[c] - 1.0);
                hi[c] = hi[c].max(comp.mean[c] + 1.0);
            }
        }
    }
    for c in 0..d {
        let mid = 0.5 * (lo[c] + hi[c]);
        let half = 0.5 * (hi[c] - lo[c]) * 3.0;
        lo[c] = mid - half;
        hi[c] = mid + half;
    }
    (lo, hi)
}

/// How [`init_random`] places the starting means.
#[derive(Debug, Clone)]
pub enum InitScheme {
    /// D²-weighted seeding from data points; pooled covariance; uniform weights.
    KmeansppLike,
    /// The true parameters with `N(0, noise²)` added to every mean coordinate.
    PerturbedTruth { truth: MixtureParams, noise: f64 },
    /// `K` distinct data points as means; pooled covariance; uniform weights.
    RandomPoints,
}

impl InitScheme {
    pub fn name(&self) -> &'static str {
        match self {
            InitScheme::KmeansppLike => "kmeanspp_like",
            InitScheme::PerturbedTruth { .. } => "perturbed_truth",
            InitScheme::RandomPoints => "random_points",
        }
    }
}

const MAX_INIT_TRIES: usize = 100;

/// Smallest separation accepted from an initializer.
const MIN_INIT_SEPARATION: f64 = 1e-12;

fn pooled_covariance(data: &DMatrix<f64>) -> Result<SpdMatrix> {
    let n = data.nrows() as f64;
    let mean = data.row_mean();
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / n;
    let ridge = 1e-6 * (cov.trace() / cov.nrows() as f64).max(f64::MIN_POSITIVE);
    cholesky(&cov, ridge)
}

/// Random initialization satisfying `Δ(θ⁽⁰⁾) > 0`; resamples up to 100 times.
pub fn init_random<R: Rng + ?Sized>(
    data: &DMatrix<f64>,
    k: usize,
    scheme: &InitScheme,
    rng: &mut R,
) -> Result<MixtureParams> {
    let n = data.nrows();
    if k == 0 || n < k {
        return Err(TamdError::Init(format!("need 1 <= K <= n, got K = {k}, n = {n}")));
    }
    if let InitScheme::PerturbedTruth { truth, noise } = scheme {
        if truth.k() != k || truth.dim() != data.ncols() {
            return Err(TamdError::Init("perturbed_truth shape does not match data".into()));
        }
        if !(*noise >= 0.0) {
            return Err(TamdError::Init(format!("noise must be >= 0, got {noise}")));
        }
    }
    let pooled = match scheme {
        InitScheme::PerturbedTruth { .. } => None,
        _ => Some(pooled_covariance(data)?),
    };

    for _ in 0..MAX_INIT_TRIES {
        let theta = match scheme {
            InitScheme::KmeansppLike => {
                let Some(idx) = kmeanspp_indices(data, k, rng) else {
                    continue;
                };
                points_init(data, &idx, pooled.as_ref().expect("pooled"))?
            }
            InitScheme::RandomPoints => {
                let idx = sample_indices(rng, n, k).into_vec();
                points_init(data, &idx, pooled.as_ref().expect("pooled"))?
            }
            InitScheme::PerturbedTruth { truth, noise } => {
                let comps = truth
                    .components()
                    .iter()
                    .map(|c| {
                        let shift = DVector::from_iterator(
                            c.dim(),
                            (0..c.dim()).map(|_| noise * rng.sample::<f64, _>(StandardNormal)),
                        );
                        GaussianComponent::new(&c.mean + shift, c.covariance.clone())
                    })
                    .collect::<Result<Vec<_>>>()?;
                MixtureParams::new(truth.weights().to_vec(), comps)?
            }
        };
        if k < 2 || separation(&theta)? > MIN_INIT_SEPARATION {
            return Ok(theta);
        }
    }
    Err(TamdError::Init(format!(
        "no positively separated {} initialization in {MAX_INIT_TRIES} tries",
        scheme.name()
    )))
}

fn points_init(data: &DMatrix<f64>, idx: &[usize], cov: &SpdMatrix) -> Result<MixtureParams> {
    let comps = idx
        .iter()
        .map(|&i| GaussianComponent::new(data.row(i).transpose(), cov.clone()))
        .collect::<Result<Vec<_>>>()?;
    MixtureParams::uniform(comps)
}

/// D² seeding; `None` when the remaining points all coincide with chosen centres.
fn kmeanspp_indices<R: Rng + ?Sized>(data: &DMatrix<f64>, k: usize, rng: &mut R) -> Option<Vec<usize>> {
    let n = data.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| (data.row(i) - data.row(chosen[0])).norm_squared())
        .collect();
    while chosen.len() < k {
        let dist = WeightedIndex::new(&nearest).ok()?;
        let next = dist.sample(rng);
        chosen.push(next);
        for (i, slot) in nearest.iter_mut().enumerate() {
            *slot = slot.min((data.row(i) - data.row(next)).norm_squared());
        }
    }
    Some(chosen)
}

/// Writes `x1..xd,label` CSV.
pub fn write_csv<W: Write>(sample: &LabeledSample, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = sample.data.ncols();
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (i, label) in sample.labels.iter().enumerate() {
        let mut rec: Vec<String> = (0..d).map(|c| sample.data[(i, c)].to_string()).collect();
        rec.push(label.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `x1..xd[,label]` CSV. The label column is optional.
pub fn read_csv<R: Read>(reader: R) -> Result<(DMatrix<f64>, Option<Vec<i64>>)> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    let has_label = header.iter().last() == Some("label");
    let d = header.len() - usize::from(has_label);
    for (i, name) in header.iter().take(d).enumerate() {
        if name != format!("x{}", i + 1) {
            return Err(TamdError::Contract(format!(
                "expected column x{} in data header, found `{name}`",
                i + 1
            )));
        }
    }
    if d == 0 {
        return Err(TamdError::Contract("data file has no x columns".into()));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(TamdError::Contract(format!("ragged row with {} fields", rec.len())));
        }
        for field in rec.iter().take(d) {
            values.push(field.trim().parse::<f64>().map_err(|e| {
                TamdError::Contract(format!("bad number `{field}`: {e}"))
            })?);
        }
        if has_label {
            let field = &rec[d];
            labels.push(field.trim().parse::<i64>().map_err(|e| {
                TamdError::Contract(format!("bad label `{field}`: {e}"))
            })?);
        }
    }
    let n = values.len() / d;
    if n == 0 {
        return Err(TamdError::Contract("data file has no rows".into()));
    }
    Ok((DMatrix::from_row_slice(n, d, &values), has_label.then_some(labels)))
}
