//! Event-grid aggregation of censored records.
//!
//! All downstream functionals integrate against the empirical counting
//! measure, so the sample is reduced once to the grid of distinct uncensored
//! event times with the normalized event counts `ΔN.(t_k)` and at-risk
//! fractions `Y.(t_k)`.

use crate::simulate::CensoredRecord;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("no records supplied")]
    Empty,
    #[error("need at least two records, got {0}")]
    TooFew(usize),
    #[error("no failures in the sample")]
    NoFailures,
    #[error("record {index} has invalid time {x}")]
    InvalidTime { index: usize, x: f64 },
    #[error("record {index} has delta {delta}, expected 0 or 1")]
    InvalidDelta { index: usize, delta: u8 },
    #[error("record {index} has covariate dimension {got}, expected {expected}")]
    InconsistentDimension {
        index: usize,
        got: usize,
        expected: usize,
    },
}

/// A censored sample sorted by withdrawal time, with the event grid and
/// counting-process aggregates precomputed.
#[derive(Debug, Clone)]
pub struct CensoredSample {
    /// Records sorted by `x` ascending, failures before censorings at ties.
    pub records: Vec<CensoredRecord>,
    /// Distinct uncensored event times `t_1 < … < t_m`.
    pub event_times: Arc<Vec<f64>>,
    /// `ΔN.(t_k)` = (#failures at `t_k`) / n.
    pub event_counts: Vec<f64>,
    /// `Y.(t_k)` = #{X_i ≥ t_k} / n.
    pub at_risk: Vec<f64>,
    /// Index of the first sorted record with `x ≥ t_k`; the at-risk set at
    /// `t_k` is the suffix `records[risk_start[k]..]`.
    pub risk_start: Vec<usize>,
    /// Largest observed withdrawal time.
    pub tau0: f64,
}

impl CensoredSample {
    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn num_events(&self) -> usize {
        self.event_times.len()
    }

    pub fn dim_z(&self) -> usize {
        self.records[0].z.len()
    }

    pub fn from_records(mut records: Vec<CensoredRecord>) -> Result<Self, DataError> {
        if records.is_empty() {
            return Err(DataError::Empty);
        }
        if records.len() < 2 {
            return Err(DataError::TooFew(records.len()));
        }
        let dim = records[0].z.len();
        for (i, r) in records.iter().enumerate() {
            if r.x.is_nan() || r.x < 0.0 {
                return Err(DataError::InvalidTime { index: i, x: r.x });
            }
            if r.delta > 1 {
                return Err(DataError::InvalidDelta {
                    index: i,
                    delta: r.delta,
                });
            }
            if r.z.len() != dim {
                return Err(DataError::InconsistentDimension {
                    index: i,
                    got: r.z.len(),
                    expected: dim,
                });
            }
        }
        if !records.iter().any(|r| r.delta == 1) {
            return Err(DataError::NoFailures);
        }
        // failures sort before censorings at tied times: the censored subject
        // stays at risk for the jump
        records.sort_by(|a, b| {
            a.x.partial_cmp(&b.x)
                .unwrap()
                .then(b.delta.cmp(&a.delta))
        });
        let n = records.len() as f64;
        let mut event_times = Vec::new();
        let mut event_counts = Vec::new();
        for r in &records {
            if r.delta == 1 {
                if event_times.last() == Some(&r.x) {
                    *event_counts.last_mut().unwrap() += 1.0 / n;
                } else {
                    event_times.push(r.x);
                    event_counts.push(1.0 / n);
                }
            }
        }
        let mut at_risk = Vec::with_capacity(event_times.len());
        let mut risk_start = Vec::with_capacity(event_times.len());
        for &t in &event_times {
            let start = records.partition_point(|r| r.x < t);
            risk_start.push(start);
            at_risk.push((records.len() - start) as f64 / n);
        }
        let tau0 = records.last().unwrap().x;
        Ok(Self {
            records,
            event_times: Arc::new(event_times),
            event_counts,
            at_risk,
            risk_start,
            tau0,
        })
    }
}
