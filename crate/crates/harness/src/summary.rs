//! Per-(cell, method) means and standard errors over replications.

use std::io::Write;

use serde::Serialize;

use crate::error::{HarnessError, Result};
use crate::runner::{cell_fields, fmt_f64, RunRecord};
use crate::spec::{CellId, Method};

pub const SUMMARY_METRICS: [&str; 12] = [
    "success",
    "mean_mse",
    "cov_frobenius_error",
    "hellinger_to_truth",
    "ari",
    "accuracy",
    "heldout_loglik",
    "final_objective",
    "iterations",
    "backtracks",
    "gradient_evals",
    "wall_time_s",
];

fn metric(r: &RunRecord, name: &str) -> f64 {
    match name {
        "success" => f64::from(u8::from(r.success)),
        "mean_mse" => r.mean_mse,
        "cov_frobenius_error" => r.cov_frobenius_error,
        "hellinger_to_truth" => r.hellinger_to_truth,
        "ari" => r.ari,
        "accuracy" => r.accuracy,
        "heldout_loglik" => r.heldout_loglik,
        "final_objective" => r.final_objective,
        "iterations" => r.iterations as f64,
        "backtracks" => r.backtracks as f64,
        "gradient_evals" => r.gradient_evals as f64,
        "wall_time_s" => r.wall_time_s,
        other => unreachable!("unknown summary metric {other}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    /// Sample SD over `√count`; NaN with fewer than two values.
    pub se: f64,
    pub count: usize,
}

/// Mean and standard error of the finite entries of `values`.
pub fn mean_se(values: &[f64]) -> MeanSe {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let count = finite.len();
    if count == 0 {
        return MeanSe {
            mean: f64::NAN,
            se: f64::NAN,
            count,
        };
    }
    let mean = finite.iter().sum::<f64>() / count as f64;
    let se = if count < 2 {
        f64::NAN
    } else {
        let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
        (var / count as f64).sqrt()
    };
    MeanSe { mean, se, count }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub cell: CellId,
    pub method: Method,
    pub replications: usize,
    pub errors: usize,
    /// One entry per name in [`SUMMARY_METRICS`]. The success rate counts
    /// errored runs as failures; the other metrics skip them.
    pub stats: Vec<MeanSe>,
}

impl SummaryRow {
    pub fn stat(&self, name: &str) -> MeanSe {
        let idx = SUMMARY_METRICS
            .iter()
            .position(|m| *m == name)
            .unwrap_or_else(|| panic!("unknown summary metric {name}"));
        self.stats[idx]
    }
}

/// Groups records by (cell, method) in order of first appearance.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: Vec<(CellId, Method, Vec<&RunRecord>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(c, m, _)| *c == r.cell && *m == r.method) {
            Some((_, _, v)) => v.push(r),
            None => groups.push((r.cell, r.method, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(cell, method, rows)| {
            let errors = rows.iter().filter(|r| r.error.is_some()).count();
            let stats = SUMMARY_METRICS
                .iter()
                .map(|&name| {
                    let values: Vec<f64> = rows
                        .iter()
                        .filter(|r| name == "success" || r.error.is_none())
                        .map(|r| metric(r, name))
                        .collect();
                    mean_se(&values)
                })
                .collect();
            SummaryRow {
                cell,
                method,
                replications: rows.len(),
                errors,
                stats,
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], include_wall_time: bool, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["dgp", "n", "d", "k", "delta", "kappa", "eps", "method", "replications", "errors"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for m in SUMMARY_METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_se"));
    }
    w.write_record(&header)?;
    for row in rows {
        let mut rec = cell_fields(&row.cell);
        rec.push(row.method.as_str().into());
        rec.push(row.replications.to_string());
        rec.push(row.errors.to_string());
        for (name, s) in SUMMARY_METRICS.iter().zip(&row.stats) {
            if *name == "wall_time_s" && !include_wall_time {
                rec.extend([String::new(), String::new()]);
            } else {
                rec.extend([fmt_f64(s.mean), fmt_f64(s.se)]);
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| HarnessError::io("writing summary", e))?;
    Ok(())
}
