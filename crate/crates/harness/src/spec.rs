//! Experiment specs in a flat `key = value` text format.
//!
//! ```text
//! # degeneracy stress
//! name = table1
//! dgp.kind = well_specified
//! dgp.n = 500
//! dgp.d = 10
//! dgp.k = 3
//! dgp.delta = [0.5, 1.0]
//! methods = [tamd, em]
//! replications = 30
//! ```
//!
//! `dgp.*` keys accept lists and span a Cartesian grid; every other key is a
//! scalar. `dgp.n_per_d` may replace `dgp.n` to tie the sample size to the
//! dimension.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};
use tamd_core::em::EmConfig;
use tamd_core::simgen::{DgpKind, DgpSpec};
use tamd_core::tamd::default_lambda;
use tamd_core::FitterConfig;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Tamd,
    Em,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Tamd => "tamd",
            Method::Em => "em",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tamd" => Ok(Method::Tamd),
            "em" => Ok(Method::Em),
            other => Err(format!("unknown method `{other}` (expected tamd or em)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleSize {
    Absolute(Vec<usize>),
    PerDim(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgpGrid {
    pub kind: Vec<DgpKind>,
    pub n: SampleSize,
    pub d: Vec<usize>,
    pub k: Vec<usize>,
    pub delta: Vec<f64>,
    pub kappa: Vec<f64>,
    pub eps: Vec<f64>,
}

/// One point of the grid; everything but the seed of a [`DgpSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellId {
    pub dgp: DgpKind,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub delta: f64,
    pub kappa: f64,
    pub eps: f64,
}

impl CellId {
    pub fn dgp_spec(&self, seed: u64) -> DgpSpec {
        DgpSpec {
            kind: self.dgp,
            n: self.n,
            d: self.d,
            k_true: self.k,
            separation_delta: self.delta,
            condition_kappa: self.kappa,
            contamination_eps: self.eps,
            seed,
        }
    }

    /// Seed for replication `rep` of this cell. Depends only on the base seed
    /// and the coordinates, never on grid order.
    pub fn seed(&self, base_seed: u64, rep: usize) -> u64 {
        let key = format!(
            "tamd-seed-v1|{base_seed}|{}|{}|{}|{}|{:016x}|{:016x}|{:016x}|{rep}",
            self.dgp,
            self.n,
            self.d,
            self.k,
            self.delta.to_bits(),
            self.kappa.to_bits(),
            self.eps.to_bits()
        );
        let digest = Sha256::digest(key.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaChoice {
    /// `√(log n / n)` for the cell's training size.
    Default,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitChoice {
    KmeansppLike,
    RandomPoints,
    PerturbedTruth { noise: f64 },
}

impl InitChoice {
    fn name(&self) -> &'static str {
        match self {
            InitChoice::KmeansppLike => "kmeanspp_like",
            InitChoice::RandomPoints => "random_points",
            InitChoice::PerturbedTruth { .. } => "perturbed_truth",
        }
    }
}

/// Fitter settings with `λ_n` left symbolic until the sample size is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitterSettings {
    pub base: FitterConfig,
    pub lambda_n: LambdaChoice,
}

impl Default for FitterSettings {
    fn default() -> Self {
        Self {
            base: FitterConfig::default(),
            lambda_n: LambdaChoice::Default,
        }
    }
}

impl FitterSettings {
    pub fn resolve(&self, n: usize) -> tamd_core::Result<FitterConfig> {
        let mut cfg = self.base;
        cfg.penalty.lambda_n = match self.lambda_n {
            LambdaChoice::Default => default_lambda(n)?,
            LambdaChoice::Fixed(v) => v,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub grid: DgpGrid,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub base_seed: u64,
    pub fitter: FitterSettings,
    pub em: EmConfig,
    pub heldout_n: usize,
    pub output_dir: PathBuf,
    pub init: InitChoice,
    pub hellinger_draws: usize,
    /// Wall-clock times vary run to run, so they only enter `results.csv`
    /// when asked for. `timings.csv` always has them.
    pub record_wall_time: bool,
}

/// A parsed right-hand side.
#[derive(Debug, Clone)]
enum Value {
    Scalar(String),
    List(Vec<String>),
}

struct Entry {
    line: usize,
    value: Value,
}

fn parse_value(raw: &str) -> std::result::Result<Value, String> {
    let raw = raw.trim();
    if let Some(inner) = raw.strip_prefix('[') {
        let inner = inner
            .strip_suffix(']')
            .ok_or_else(|| "unterminated list".to_string())?;
        let items: Vec<String> = inner
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if items.is_empty() {
            return Err("empty list".into());
        }
        Ok(Value::List(items))
    } else if raw.is_empty() {
        Err("missing value".into())
    } else {
        Ok(Value::Scalar(raw.to_string()))
    }
}

/// Key/value pairs of a spec file, consumed key by key.
struct Entries {
    map: BTreeMap<String, Entry>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| HarnessError::SpecSyntax {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(HarnessError::SpecSyntax {
                    line,
                    message: "empty key".into(),
                });
            }
            let value = parse_value(value).map_err(|message| HarnessError::SpecSyntax { line, message })?;
            if map.insert(key.clone(), Entry { line, value }).is_some() {
                return Err(HarnessError::SpecSyntax {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self { map })
    }

    fn finish(self) -> Result<()> {
        match self.map.into_iter().next() {
            None => Ok(()),
            Some((key, entry)) => Err(HarnessError::SpecSyntax {
                line: entry.line,
                message: format!("unknown key `{key}`"),
            }),
        }
    }

    fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(entry) = self.map.remove(key) else {
            return Ok(None);
        };
        let items = match entry.value {
            Value::Scalar(s) => vec![s],
            Value::List(v) => v,
        };
        let parsed = items
            .iter()
            .map(|s| {
                s.parse::<T>().map_err(|e| HarnessError::SpecSyntax {
                    line: entry.line,
                    message: format!("`{key}`: cannot parse `{s}`: {e}"),
                })
            })
            .collect::<Result<Vec<T>>>()?;
        Ok(Some(parsed))
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(entry) = self.map.remove(key) else {
            return Ok(None);
        };
        match entry.value {
            Value::Scalar(s) => s.parse::<T>().map(Some).map_err(|e| HarnessError::SpecSyntax {
                line: entry.line,
                message: format!("`{key}`: cannot parse `{s}`: {e}"),
            }),
            Value::List(_) => Err(HarnessError::SpecSyntax {
                line: entry.line,
                message: format!("`{key}` takes a single value"),
            }),
        }
    }
}

fn required<T>(value: Option<T>, key: &str) -> Result<T> {
    value.ok_or_else(|| HarnessError::Usage(format!("spec is missing required key `{key}`")))
}

/// Reads `fitter.*` keys into `settings`.
fn take_fitter(entries: &mut Entries, settings: &mut FitterSettings) -> Result<()> {
    let cfg = &mut settings.base;
    if let Some(v) = entries.take("fitter.max_iters")? {
        cfg.max_iters = v;
    }
    if let Some(v) = entries.take("fitter.tol")? {
        cfg.convergence_tol = v;
    }
    if let Some(v) = entries.take::<String>("fitter.lambda_n")? {
        settings.lambda_n = if v == "default" {
            LambdaChoice::Default
        } else {
            LambdaChoice::Fixed(v.parse().map_err(|e| {
                HarnessError::Usage(format!("fitter.lambda_n: expected `default` or a number: {e}"))
            })?)
        };
    }
    let pen = &mut cfg.penalty;
    for (key, slot) in [
        ("fitter.lambda_wt", &mut pen.lambda_wt),
        ("fitter.lambda_sc", &mut pen.lambda_sc),
        ("fitter.alpha", &mut pen.alpha),
        ("fitter.beta", &mut pen.beta),
        ("fitter.jitter", &mut pen.jitter),
    ] {
        if let Some(v) = entries.take(key)? {
            *slot = v;
        }
    }
    if let Some(v) = entries.take("fitter.backtrack_factor")? {
        cfg.backtrack_factor = v;
    }
    if let Some(v) = entries.take("fitter.backtrack_max_steps")? {
        cfg.backtrack_max_steps = v;
    }
    if let Some(v) = entries.take("fitter.monotonicity_tol")? {
        cfg.monotonicity_tol = v;
    }
    // λ_n is only known per cell; validate with a stand-in
    let mut probe = *cfg;
    probe.penalty.lambda_n = match settings.lambda_n {
        LambdaChoice::Default => 0.1,
        LambdaChoice::Fixed(v) => v,
    };
    probe.validate()?;
    Ok(())
}

fn take_init(entries: &mut Entries) -> Result<InitChoice> {
    let noise: Option<f64> = entries.take("init_noise")?;
    let name: String = entries.take("init")?.unwrap_or_else(|| "kmeanspp_like".into());
    let choice = match name.as_str() {
        "kmeanspp_like" => InitChoice::KmeansppLike,
        "random_points" => InitChoice::RandomPoints,
        "perturbed_truth" => InitChoice::PerturbedTruth {
            noise: noise.unwrap_or(0.5),
        },
        other => return Err(HarnessError::Usage(format!("unknown init scheme `{other}`"))),
    };
    if noise.is_some() && !matches!(choice, InitChoice::PerturbedTruth { .. }) {
        return Err(HarnessError::Usage("init_noise only applies to init = perturbed_truth".into()));
    }
    if let InitChoice::PerturbedTruth { noise } = choice {
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(HarnessError::Usage(format!("init_noise must be >= 0, got {noise}")));
        }
    }
    Ok(choice)
}

fn parse_kind(s: &str) -> std::result::Result<DgpKind, String> {
    s.parse::<DgpKind>().map_err(|e| e.to_string())
}

/// Wraps `DgpKind` parsing so `take_list` can report it.
struct KindToken(DgpKind);

impl FromStr for KindToken {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_kind(s).map(KindToken)
    }
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut e = Entries::parse(text)?;
        if e.map.is_empty() {
            return Err(HarnessError::Usage("spec file is empty".into()));
        }
        let name: String = required(e.take("name")?, "name")?;
        if name.chars().any(|c| c.is_whitespace() || c == '/') {
            return Err(HarnessError::Usage(format!("name `{name}` may not contain whitespace or `/`")));
        }

        let kind = e
            .take_list::<KindToken>("dgp.kind")?
            .map(|v| v.into_iter().map(|t| t.0).collect())
            .unwrap_or_else(|| vec![DgpKind::WellSpecified]);
        let n = match (e.take_list::<usize>("dgp.n")?, e.take_list::<f64>("dgp.n_per_d")?) {
            (Some(v), None) => SampleSize::Absolute(v),
            (None, Some(v)) => SampleSize::PerDim(v),
            (Some(_), Some(_)) => {
                return Err(HarnessError::Usage("give only one of dgp.n and dgp.n_per_d".into()))
            }
            (None, None) => return Err(HarnessError::Usage("spec needs dgp.n or dgp.n_per_d".into())),
        };
        let grid = DgpGrid {
            kind,
            n,
            d: required(e.take_list("dgp.d")?, "dgp.d")?,
            k: required(e.take_list("dgp.k")?, "dgp.k")?,
            delta: required(e.take_list("dgp.delta")?, "dgp.delta")?,
            kappa: e.take_list("dgp.kappa")?.unwrap_or_else(|| vec![1.0]),
            eps: e.take_list("dgp.eps")?.unwrap_or_else(|| vec![0.0]),
        };

        let mut methods: Vec<Method> = e
            .take_list("methods")?
            .unwrap_or_else(|| vec![Method::Tamd, Method::Em]);
        methods.sort();
        methods.dedup();

        let replications: usize = required(e.take("replications")?, "replications")?;
        if replications == 0 {
            return Err(HarnessError::Usage("replications must be >= 1".into()));
        }
        let base_seed = e.take("base_seed")?.unwrap_or(0);
        let heldout_n = e.take("heldout_n")?.unwrap_or(1000);
        if heldout_n == 0 {
            return Err(HarnessError::Usage("heldout_n must be >= 1".into()));
        }
        let hellinger_draws = e.take("hellinger_draws")?.unwrap_or(10_000);
        if hellinger_draws < 2 {
            return Err(HarnessError::Usage("hellinger_draws must be >= 2".into()));
        }
        let output_dir = e
            .take::<String>("output_dir")?
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out").join(&name));
        let record_wall_time = e.take("record_wall_time")?.unwrap_or(false);
        let init = take_init(&mut e)?;

        let mut fitter = FitterSettings::default();
        take_fitter(&mut e, &mut fitter)?;

        let mut em = EmConfig::default();
        if let Some(v) = e.take("em.max_iters")? {
            em.max_iters = v;
        }
        if let Some(v) = e.take("em.tol")? {
            em.convergence_tol = v;
        }
        if let Some(v) = e.take("em.restarts")? {
            em.restarts = v;
        }
        em.validate()?;
        e.finish()?;

        let spec = Self {
            name,
            grid,
            methods,
            replications,
            base_seed,
            fitter,
            em,
            heldout_n,
            output_dir,
            init,
            hellinger_draws,
            record_wall_time,
        };
        for cell in spec.cells()? {
            cell.dgp_spec(0)
                .validate()
                .map_err(|err| HarnessError::Usage(format!("invalid grid cell {cell:?}: {err}")))?;
            if cell.n < cell.k {
                return Err(HarnessError::Usage(format!("grid cell {cell:?} has n < k")));
            }
        }
        Ok(spec)
    }

    /// Grid cells in a fixed order: kind, n, d, k, delta, kappa, eps.
    pub fn cells(&self) -> Result<Vec<CellId>> {
        let g = &self.grid;
        let mut out = Vec::new();
        for &kind in &g.kind {
            let sizes: Vec<(Option<usize>, Option<f64>)> = match &g.n {
                SampleSize::Absolute(v) => v.iter().map(|&n| (Some(n), None)).collect(),
                SampleSize::PerDim(v) => v.iter().map(|&r| (None, Some(r))).collect(),
            };
            for &(abs, ratio) in &sizes {
                for &d in &g.d {
                    let n = match (abs, ratio) {
                        (Some(n), _) => n,
                        (None, Some(r)) => {
                            let n = (r * d as f64).round();
                            if !(n >= 1.0) {
                                return Err(HarnessError::Usage(format!("n_per_d {r} gives no points at d = {d}")));
                            }
                            n as usize
                        }
                        _ => unreachable!("one of n and n_per_d is set"),
                    };
                    for &k in &g.k {
                        for &delta in &g.delta {
                            for &kappa in &g.kappa {
                                for &eps in &g.eps {
                                    out.push(CellId {
                                        dgp: kind,
                                        n,
                                        d,
                                        k,
                                        delta,
                                        kappa,
                                        eps,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Canonical text form; parses back to an equal spec.
    pub fn to_text(&self) -> String {
        fn list<T: std::fmt::Display>(v: &[T]) -> String {
            if v.len() == 1 {
                v[0].to_string()
            } else {
                format!("[{}]", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "))
            }
        }
        let g = &self.grid;
        let f = &self.fitter.base;
        let mut s = String::new();
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "dgp.kind = {}", list(&g.kind));
        match &g.n {
            SampleSize::Absolute(v) => {
                let _ = writeln!(s, "dgp.n = {}", list(v));
            }
            SampleSize::PerDim(v) => {
                let _ = writeln!(s, "dgp.n_per_d = {}", list(v));
            }
        }
        let _ = writeln!(s, "dgp.d = {}", list(&g.d));
        let _ = writeln!(s, "dgp.k = {}", list(&g.k));
        let _ = writeln!(s, "dgp.delta = {}", list(&g.delta));
        let _ = writeln!(s, "dgp.kappa = {}", list(&g.kappa));
        let _ = writeln!(s, "dgp.eps = {}", list(&g.eps));
        let methods: Vec<&str> = self.methods.iter().map(|m| m.as_str()).collect();
        let _ = writeln!(s, "methods = [{}]", methods.join(", "));
        let _ = writeln!(s, "replications = {}", self.replications);
        let _ = writeln!(s, "base_seed = {}", self.base_seed);
        let _ = writeln!(s, "heldout_n = {}", self.heldout_n);
        let _ = writeln!(s, "hellinger_draws = {}", self.hellinger_draws);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "record_wall_time = {}", self.record_wall_time);
        let _ = writeln!(s, "init = {}", self.init.name());
        if let InitChoice::PerturbedTruth { noise } = self.init {
            let _ = writeln!(s, "init_noise = {noise}");
        }
        let _ = writeln!(s, "fitter.max_iters = {}", f.max_iters);
        let _ = writeln!(s, "fitter.tol = {:e}", f.convergence_tol);
        match self.fitter.lambda_n {
            LambdaChoice::Default => {
                let _ = writeln!(s, "fitter.lambda_n = default");
            }
            LambdaChoice::Fixed(v) => {
                let _ = writeln!(s, "fitter.lambda_n = {v:e}");
            }
        }
        let _ = writeln!(s, "fitter.lambda_wt = {:e}", f.penalty.lambda_wt);
        let _ = writeln!(s, "fitter.lambda_sc = {:e}", f.penalty.lambda_sc);
        let _ = writeln!(s, "fitter.alpha = {:e}", f.penalty.alpha);
        let _ = writeln!(s, "fitter.beta = {:e}", f.penalty.beta);
        let _ = writeln!(s, "fitter.jitter = {:e}", f.penalty.jitter);
        let _ = writeln!(s, "fitter.backtrack_factor = {:e}", f.backtrack_factor);
        let _ = writeln!(s, "fitter.backtrack_max_steps = {}", f.backtrack_max_steps);
        let _ = writeln!(s, "fitter.monotonicity_tol = {:e}", f.monotonicity_tol);
        let _ = writeln!(s, "em.max_iters = {}", self.em.max_iters);
        let _ = writeln!(s, "em.tol = {:e}", self.em.convergence_tol);
        let _ = writeln!(s, "em.restarts = {}", self.em.restarts);
        s
    }
}

/// Fitter settings and `k` for the `fit` subcommand, from the same format.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub k: Option<usize>,
    pub init: InitChoice,
    pub fitter: FitterSettings,
}

impl FitSettings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut e = Entries::parse(text)?;
        let k = e.take("k")?;
        let init = take_init(&mut e)?;
        if matches!(init, InitChoice::PerturbedTruth { .. }) {
            return Err(HarnessError::Usage("perturbed_truth needs a known truth; not available for fit".into()));
        }
        let mut fitter = FitterSettings::default();
        take_fitter(&mut e, &mut fitter)?;
        e.finish()?;
        Ok(Self { k, init, fitter })
    }
}
