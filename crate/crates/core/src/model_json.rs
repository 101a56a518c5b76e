//! Model files: `{"weights": [...], "components": [{"mean": [...],
//! "covariance": [[...], ...]}]}` with covariances dense and row-major.
//! Numbers are written with 17 significant digits.

use std::io::{self, Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::affinity::MixtureParams;
use crate::error::{Result, TamdError};
use crate::gaussmath::{cholesky_exact, GaussianComponent};

/// Relative asymmetry tolerated in a parsed covariance.
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentJson {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    pub weights: Vec<f64>,
    pub components: Vec<ComponentJson>,
}

impl From<&MixtureParams> for ModelJson {
    fn from(theta: &MixtureParams) -> Self {
        let components = theta
            .components()
            .iter()
            .map(|c| {
                let dense = c.covariance.to_dense();
                ComponentJson {
                    mean: c.mean.iter().copied().collect(),
                    covariance: dense.row_iter().map(|r| r.iter().copied().collect()).collect(),
                }
            })
            .collect();
        Self {
            weights: theta.weights().to_vec(),
            components,
        }
    }
}

impl ModelJson {
    /// Validates shapes, symmetry and positive definiteness.
    pub fn to_params(&self) -> Result<MixtureParams> {
        if self.weights.len() != self.components.len() {
            return Err(TamdError::Contract(format!(
                "{} weights for {} components",
                self.weights.len(),
                self.components.len()
            )));
        }
        let comps = self
            .components
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let d = c.mean.len();
                if c.covariance.len() != d || c.covariance.iter().any(|r| r.len() != d) {
                    return Err(TamdError::Contract(format!(
                        "component {k}: covariance is not {d}x{d}"
                    )));
                }
                let dense = DMatrix::from_fn(d, d, |i, j| c.covariance[i][j]);
                let scale = dense.amax().max(f64::MIN_POSITIVE);
                if (&dense - dense.transpose()).amax() > SYMMETRY_TOL * scale {
                    return Err(TamdError::Contract(format!("component {k}: covariance not symmetric")));
                }
                GaussianComponent::new(DVector::from_vec(c.mean.clone()), cholesky_exact(&dense, 0.0)?)
            })
            .collect::<Result<Vec<_>>>()?;
        MixtureParams::new(self.weights.clone(), comps)
    }
}

/// Pretty printer that writes every float as `d.dddddddddddddddde±x`.
struct FullPrecision(PrettyFormatter<'static>);

impl Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes any value with full-precision floats.
pub fn to_writer_full_precision<W: Write, T: Serialize + ?Sized>(writer: W, value: &T) -> Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(writer, FullPrecision(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    Ok(())
}

pub fn to_string_full_precision<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    to_writer_full_precision(&mut buf, value)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_model<W: Write>(theta: &MixtureParams, mut writer: W) -> Result<()> {
    to_writer_full_precision(&mut writer, &ModelJson::from(theta))?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn read_model<R: Read>(reader: R) -> Result<MixtureParams> {
    let raw: ModelJson = serde_json::from_reader(reader)?;
    raw.to_params()
}
