//! File formats: the `x,delta,z1..zd` data CSV and JSON result documents.
//!
//! CSV numbers are written as `{:.16e}` (17 significant digits) so that
//! round-trips and repeated runs are byte-identical.

use crate::estimate::{Diagnostics, FitResult, Method};
use crate::simulate::CensoredRecord;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub fn records_to_csv(records: &[CensoredRecord]) -> String {
    let dim = records.first().map_or(0, |r| r.z.len());
    let mut out = String::from("x,delta");
    for j in 1..=dim {
        let _ = write!(out, ",z{j}");
    }
    out.push('\n');
    for r in records {
        let _ = write!(out, "{:.16e},{}", r.x, r.delta);
        for z in &r.z {
            let _ = write!(out, ",{z:.16e}");
        }
        out.push('\n');
    }
    out
}

pub fn write_records(path: &Path, records: &[CensoredRecord]) -> Result<(), IoError> {
    std::fs::write(path, records_to_csv(records))?;
    Ok(())
}

pub fn parse_records(text: &str) -> Result<Vec<CensoredRecord>, IoError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(IoError::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "x" || cols[1] != "delta" {
        return Err(IoError::Parse {
            line: 1,
            msg: format!("expected header starting with x,delta, got {header:?}"),
        });
    }
    let dim = cols.len() - 2;
    let mut records = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(IoError::Parse {
                line: lineno,
                msg: format!("expected {} fields, got {}", dim + 2, fields.len()),
            });
        }
        let x: f64 = fields[0].parse().map_err(|e| IoError::Parse {
            line: lineno,
            msg: format!("bad x {:?}: {e}", fields[0]),
        })?;
        let delta: u8 = fields[1].parse().map_err(|e| IoError::Parse {
            line: lineno,
            msg: format!("bad delta {:?}: {e}", fields[1]),
        })?;
        let mut z = Vec::with_capacity(dim);
        for f in &fields[2..] {
            z.push(f.parse().map_err(|e| IoError::Parse {
                line: lineno,
                msg: format!("bad covariate {f:?}: {e}"),
            })?);
        }
        records.push(CensoredRecord { x, delta, z });
    }
    Ok(records)
}

pub fn read_records(path: &Path) -> Result<Vec<CensoredRecord>, IoError> {
    let text = std::fs::read_to_string(path)?;
    parse_records(&text)
}

/// JSON document for a completed (or failed-with-diagnostics) fit.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitDocument {
    pub theta_hat: Vec<f64>,
    pub se: Vec<f64>,
    /// Row-major covariance of `θ̂`.
    pub cov: Vec<Vec<f64>>,
    pub method: String,
    pub iterations: usize,
    pub score_norm: f64,
    pub diagnostics: DiagnosticsDoc,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_echo: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DiagnosticsDoc {
    pub kappa: f64,
    pub fredholm_residual: f64,
    pub v_condition: f64,
}

impl FitDocument {
    pub fn from_fit(fit: &FitResult, config_echo: Option<serde_json::Value>, seed: Option<u64>) -> Self {
        let d = fit.theta_hat.len();
        let cov = (0..d)
            .map(|i| (0..d).map(|j| fit.cov_theta[(i, j)]).collect())
            .collect();
        Self {
            theta_hat: fit.theta_hat.clone(),
            se: fit.se.clone(),
            cov,
            method: match fit.method {
                Method::ZEstimator => "z_estimator".into(),
                Method::OneStep => "one_step".into(),
            },
            iterations: fit.iterations,
            score_norm: fit.score_norm_at_solution,
            diagnostics: diagnostics_doc(&fit.diagnostics),
            config_echo,
            seed,
        }
    }
}

fn diagnostics_doc(d: &Diagnostics) -> DiagnosticsDoc {
    DiagnosticsDoc {
        kappa: d.kappa,
        fredholm_residual: d.fredholm_residual,
        v_condition: d.v_condition,
    }
}
