//! Simulation of censored samples from a transformation model with known
//! `(θ₀, Γ₀)`.
//!
//! Failure times are drawn by inverting the conditional cumulative hazard:
//! `T = Γ₀⁻¹(A⁻¹(E, θ₀, z))` with `E` standard exponential.  Censoring is
//! either Koziol-Green (`G_c(t|z) = F(Γ₀(t), θ₀, z)^a`, sampled the same way
//! with rate `E'/a`), an independent law on `(0, τ₀)` with an atom at `τ₀`,
//! or absent.
//!
//! Each record uses its own counter-derived RNG stream, so output is
//! bit-identical for a fixed seed regardless of scheduling.

use crate::core_model::{CoreModel, ModelError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid core model: {0}")]
    Model(#[from] ModelError),
    #[error("theta0 has length {got}, model expects {expected}")]
    ThetaDimension { got: usize, expected: usize },
    #[error("sample size must be positive")]
    ZeroSampleSize,
    #[error("power transform exponent must be positive, got {0}")]
    BadPower(f64),
    #[error("Koziol-Green exponent must be nonnegative, got {0}")]
    BadKoziolGreen(f64),
    #[error("atom censoring requires tau0 > 0 and atom in (0, 1], got tau0={tau0}, atom={atom}")]
    BadAtomCensoring { tau0: f64, atom: f64 },
    #[error("discrete covariate law needs matching support/probability lengths summing to 1")]
    BadDiscreteLaw,
    #[error("covariate law dimension {got} does not match model covariate dimension {expected}")]
    CovariateDimension { got: usize, expected: usize },
}

/// Named monotone transformations `Γ₀` with `Γ₀(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Gamma0 {
    Identity,
    Power { p: f64 },
    Log1p,
}

impl Gamma0 {
    pub fn forward(&self, t: f64) -> f64 {
        match *self {
            Gamma0::Identity => t,
            Gamma0::Power { p } => t.powf(p),
            Gamma0::Log1p => t.ln_1p(),
        }
    }

    pub fn inverse(&self, v: f64) -> f64 {
        match *self {
            Gamma0::Identity => v,
            Gamma0::Power { p } => v.powf(1.0 / p),
            Gamma0::Log1p => v.exp_m1(),
        }
    }
}

/// Law of the covariate vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CovariateLaw {
    /// i.i.d. uniform components on `[-bound, bound]`.
    Uniform { dim: usize, bound: f64 },
    Discrete {
        support: Vec<Vec<f64>>,
        probs: Vec<f64>,
    },
}

impl CovariateLaw {
    pub fn dim(&self) -> usize {
        match self {
            CovariateLaw::Uniform { dim, .. } => *dim,
            CovariateLaw::Discrete { support, .. } => {
                support.first().map(|v| v.len()).unwrap_or(0)
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            CovariateLaw::Uniform { dim, bound } => {
                (0..*dim).map(|_| rng.gen_range(-bound..=*bound)).collect()
            }
            CovariateLaw::Discrete { support, probs } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (v, &p) in support.iter().zip(probs) {
                    acc += p;
                    if u <= acc {
                        return v.clone();
                    }
                }
                support.last().cloned().unwrap_or_default()
            }
        }
    }
}

/// Censoring mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Censoring {
    None,
    /// `G_c(t|z) = F(Γ₀(t), θ₀, z)^a`; `a = 0` is uncensored data.
    KoziolGreen { a: f64 },
    /// `T' = min(U, τ₀)` with `P(T' = τ₀) ≥ atom`; the continuous part is
    /// uniform on `(0, τ₀)`.
    IndependentWithAtom { tau0: f64, atom: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: CoreModel,
    pub theta0: Vec<f64>,
    pub gamma0: Gamma0,
    pub covariate_law: CovariateLaw,
    pub censoring: Censoring,
    pub n: usize,
    pub seed: u64,
}

/// One observed record: withdrawal time, failure indicator, covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct CensoredRecord {
    pub x: f64,
    pub delta: u8,
    pub z: Vec<f64>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.model.validate()?;
        if self.theta0.len() != self.model.dim_theta {
            return Err(SimError::ThetaDimension {
                got: self.theta0.len(),
                expected: self.model.dim_theta,
            });
        }
        if self.n == 0 {
            return Err(SimError::ZeroSampleSize);
        }
        if let Gamma0::Power { p } = self.gamma0 {
            if !(p > 0.0) {
                return Err(SimError::BadPower(p));
            }
        }
        match self.censoring {
            Censoring::KoziolGreen { a } if !(a >= 0.0) => {
                return Err(SimError::BadKoziolGreen(a));
            }
            Censoring::IndependentWithAtom { tau0, atom }
                if !(tau0 > 0.0 && atom > 0.0 && atom <= 1.0) =>
            {
                return Err(SimError::BadAtomCensoring { tau0, atom });
            }
            _ => {}
        }
        if let CovariateLaw::Discrete { support, probs } = &self.covariate_law {
            let total: f64 = probs.iter().sum();
            if support.is_empty()
                || support.len() != probs.len()
                || (total - 1.0).abs() > 1e-9
                || probs.iter().any(|&p| p < 0.0)
                || support.iter().any(|v| v.len() != support[0].len())
            {
                return Err(SimError::BadDiscreteLaw);
            }
        }
        if self.covariate_law.dim() != self.model.dim_z() {
            return Err(SimError::CovariateDimension {
                got: self.covariate_law.dim(),
                expected: self.model.dim_z(),
            });
        }
        Ok(())
    }
}

fn std_exponential(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -u.ln()
}

/// Draws a failure time with conditional cumulative hazard `A(Γ₀(·), θ₀ | z)`.
pub fn draw_failure(
    model: &CoreModel,
    theta0: &[f64],
    gamma0: Gamma0,
    z: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<f64, ModelError> {
    let e = std_exponential(rng);
    failure_from_exponential(model, theta0, gamma0, z, e)
}

pub(crate) fn failure_from_exponential(
    model: &CoreModel,
    theta0: &[f64],
    gamma0: Gamma0,
    z: &[f64],
    e: f64,
) -> Result<f64, ModelError> {
    Ok(gamma0.inverse(model.inverse_cum_hazard(e, theta0, z)?))
}

/// Draws a censoring time for the configured mechanism; `+∞` means no
/// censoring is possible for this subject.
pub fn draw_censoring(
    config: &SimConfig,
    z: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<f64, ModelError> {
    match config.censoring {
        Censoring::None => Ok(f64::INFINITY),
        Censoring::KoziolGreen { a } => {
            if a == 0.0 {
                return Ok(f64::INFINITY);
            }
            let e = std_exponential(rng);
            failure_from_exponential(&config.model, &config.theta0, config.gamma0, z, e / a)
        }
        Censoring::IndependentWithAtom { tau0, atom } => {
            let u: f64 = rng.gen();
            if u < atom {
                Ok(tau0)
            } else {
                Ok(rng.gen_range(0.0..tau0))
            }
        }
    }
}

fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generates `n` i.i.d. records `(X, δ, Z)` with `X = min(T, T')`,
/// `δ = 1(T ≤ T')`, `T ⟂ T'` given `Z`.  Deterministic given the seed.
pub fn simulate_sample(config: &SimConfig) -> Result<Vec<CensoredRecord>, SimError> {
    config.validate()?;
    let records: Result<Vec<CensoredRecord>, ModelError> = (0..config.n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = record_rng(config.seed, i);
            let z = config.covariate_law.draw(&mut rng);
            let t = draw_failure(&config.model, &config.theta0, config.gamma0, &z, &mut rng)?;
            let tc = draw_censoring(config, &z, &mut rng)?;
            let (x, delta) = if t <= tc { (t, 1) } else { (tc, 0) };
            Ok(CensoredRecord { x, delta, z })
        })
        .collect();
    Ok(records?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_model::Family;
    use approx::assert_abs_diff_eq;

    fn base_config(censoring: Censoring, n: usize) -> SimConfig {
        SimConfig {
            model: CoreModel {
                family: Family::OddsRatio { eta: 1.0 },
                dim_theta: 1,
                covariate_bound: 1.0,
            },
            theta0: vec![1.0],
            gamma0: Gamma0::Identity,
            covariate_law: CovariateLaw::Uniform { dim: 1, bound: 1.0 },
            censoring,
            n,
            seed: 42,
        }
    }

    #[test]
    fn failure_inversion_examples() {
        let cfg = base_config(Censoring::None, 1);
        let t = failure_from_exponential(
            &cfg.model,
            &[0.0],
            Gamma0::Identity,
            &[0.0],
            2.0f64.ln(),
        )
        .unwrap();
        assert_abs_diff_eq!(t, 1.0, epsilon = 1e-12);
        let t0 =
            failure_from_exponential(&cfg.model, &[0.0], Gamma0::Identity, &[0.0], 0.0).unwrap();
        assert_eq!(t0, 0.0);
        // PH identity chain
        let ph = CoreModel {
            family: Family::OddsRatio { eta: 0.0 },
            dim_theta: 1,
            covariate_bound: 1.0,
        };
        let e = std::f64::consts::E;
        let t = failure_from_exponential(&ph, &[0.0], Gamma0::Identity, &[0.0], e).unwrap();
        assert_abs_diff_eq!(t, e, epsilon = 1e-12);
    }

    #[test]
    fn koziol_green_a0_means_uncensored() {
        let cfg = base_config(Censoring::KoziolGreen { a: 0.0 }, 100);
        let sample = simulate_sample(&cfg).unwrap();
        assert!(sample.iter().all(|r| r.delta == 1));
    }

    #[test]
    fn censoring_none_all_failures() {
        let cfg = base_config(Censoring::None, 200);
        let sample = simulate_sample(&cfg).unwrap();
        assert!(sample.iter().all(|r| r.delta == 1));
    }

    #[test]
    fn degenerate_atom_censoring() {
        let cfg = base_config(
            Censoring::IndependentWithAtom {
                tau0: 5.0,
                atom: 1.0,
            },
            300,
        );
        let sample = simulate_sample(&cfg).unwrap();
        for r in &sample {
            assert!(r.x <= 5.0);
            if r.delta == 0 {
                assert_eq!(r.x, 5.0);
            }
        }
    }

    #[test]
    fn same_seed_identical_output() {
        let cfg = base_config(Censoring::KoziolGreen { a: 1.0 }, 500);
        let a = simulate_sample(&cfg).unwrap();
        let b = simulate_sample(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn koziol_green_failure_fraction_one_half() {
        // with G_c = F the failure probability is exactly 1/2
        let n = 100_000;
        let cfg = base_config(Censoring::KoziolGreen { a: 1.0 }, n);
        let sample = simulate_sample(&cfg).unwrap();
        let frac = sample.iter().filter(|r| r.delta == 1).count() as f64 / n as f64;
        let se = (0.25f64 / n as f64).sqrt();
        assert!((frac - 0.5).abs() < 3.0 * se, "frac = {frac}");
    }

    #[test]
    fn ph_marginal_is_standard_exponential() {
        // PH, Γ₀ identity, θ₀ = 0: T ~ Exp(1); KS statistic below the 1%
        // critical value 1.63/sqrt(n)
        let n = 10_000;
        let mut cfg = base_config(Censoring::None, n);
        cfg.model.family = Family::OddsRatio { eta: 0.0 };
        cfg.theta0 = vec![0.0];
        let mut times: Vec<f64> = simulate_sample(&cfg).unwrap().iter().map(|r| r.x).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks = 0.0f64;
        for (i, &t) in times.iter().enumerate() {
            let cdf = 1.0 - (-t).exp();
            let emp_hi = (i + 1) as f64 / n as f64;
            let emp_lo = i as f64 / n as f64;
            ks = ks.max((cdf - emp_lo).abs()).max((cdf - emp_hi).abs());
        }
        assert!(ks < 1.63 / (n as f64).sqrt(), "ks = {ks}");
    }

    #[test]
    fn koziol_green_proportionality() {
        // P(δ=1 | X > t) constant in t: slope of a logistic fit of δ on X
        // is within 3 SE of zero
        let n = 50_000;
        let cfg = base_config(Censoring::KoziolGreen { a: 1.0 }, n);
        let sample = simulate_sample(&cfg).unwrap();
        let (slope, se) = logistic_slope(
            &sample.iter().map(|r| r.x).collect::<Vec<_>>(),
            &sample.iter().map(|r| r.delta as f64).collect::<Vec<_>>(),
        );
        assert!(slope.abs() < 3.0 * se, "slope = {slope}, se = {se}");
    }

    // one-covariate logistic regression by Newton iteration; returns the
    // slope and its standard error
    fn logistic_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
        let n = x.len();
        let mut beta = [0.0f64, 0.0];
        for _ in 0..25 {
            let mut score = [0.0f64, 0.0];
            let mut info = [[0.0f64; 2]; 2];
            for i in 0..n {
                let eta = beta[0] + beta[1] * x[i];
                let p = 1.0 / (1.0 + (-eta).exp());
                let w = p * (1.0 - p);
                let r = y[i] - p;
                score[0] += r;
                score[1] += r * x[i];
                info[0][0] += w;
                info[0][1] += w * x[i];
                info[1][1] += w * x[i] * x[i];
            }
            info[1][0] = info[0][1];
            let det = info[0][0] * info[1][1] - info[0][1] * info[1][0];
            let d0 = (info[1][1] * score[0] - info[0][1] * score[1]) / det;
            let d1 = (-info[1][0] * score[0] + info[0][0] * score[1]) / det;
            beta[0] += d0;
            beta[1] += d1;
            if d0.abs() + d1.abs() < 1e-10 {
                break;
            }
        }
        // SE from the inverse information at the fit
        let mut info = [[0.0f64; 2]; 2];
        for i in 0..n {
            let eta = beta[0] + beta[1] * x[i];
            let p = 1.0 / (1.0 + (-eta).exp());
            let w = p * (1.0 - p);
            info[0][0] += w;
            info[0][1] += w * x[i];
            info[1][1] += w * x[i] * x[i];
        }
        info[1][0] = info[0][1];
        let det = info[0][0] * info[1][1] - info[0][1] * info[1][0];
        (beta[1], (info[0][0] / det).sqrt())
    }

    #[test]
    fn atom_observed_at_tau0() {
        let cfg = base_config(
            Censoring::IndependentWithAtom {
                tau0: 1.5,
                atom: 0.5,
            },
            10_000,
        );
        let sample = simulate_sample(&cfg).unwrap();
        let max_x = sample.iter().map(|r| r.x).fold(0.0, f64::max);
        let at_tau = sample.iter().filter(|r| r.x == 1.5).count();
        assert_eq!(max_x, 1.5);
        assert!(at_tau > 0);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = base_config(Censoring::None, 10);
        cfg.theta0 = vec![1.0, 2.0];
        assert!(matches!(
            simulate_sample(&cfg),
            Err(SimError::ThetaDimension { .. })
        ));
        let mut cfg = base_config(Censoring::None, 0);
        cfg.n = 0;
        assert!(matches!(simulate_sample(&cfg), Err(SimError::ZeroSampleSize)));
        let cfg = base_config(
            Censoring::IndependentWithAtom {
                tau0: -1.0,
                atom: 0.5,
            },
            10,
        );
        assert!(matches!(
            simulate_sample(&cfg),
            Err(SimError::BadAtomCensoring { .. })
        ));
    }
}
