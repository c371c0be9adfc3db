//! Estimation of the Euclidean parameter of semiparametric transformation
//! models for right-censored failure-time data.
//!
//! The conditional cumulative hazard of a failure time `T` given covariates
//! `Z = z` is modelled as `A(Γ(t), θ | z)`, where `A` is a parametric "core"
//! family (generalized odds-ratio or linear hazard), `Γ` is an unknown
//! monotone transformation and `θ` is the parameter of interest.  The crate
//! provides:
//!
//! - the core hazard families and their log-hazard derivatives ([`core_model`]),
//! - a simulator for censored samples with known `(θ₀, Γ₀)` ([`simulate`]),
//! - event-grid aggregation of censored records ([`dataset`]),
//! - the sample functionals, transformation estimator and Volterra
//!   solver ([`empirical`]),
//! - a discrete Fredholm solver with an O(m) resolvent built from interval
//!   recursions ([`fredholm`]),
//! - the efficient-score process and its covariance matrices ([`score`]),
//! - Z-estimation and one-step correction ([`estimate`]),
//! - file formats used by the command-line interface ([`io`]).

pub mod core_model;
pub mod dataset;
pub mod empirical;
pub mod estimate;
pub mod fredholm;
pub mod io;
pub mod score;
pub mod simulate;
pub mod step;

pub use core_model::{CoreModel, Family, LogHazardDerivs};
pub use dataset::CensoredSample;
pub use estimate::FitResult;
pub use simulate::{CensoredRecord, SimConfig};
pub use step::StepFunction;
