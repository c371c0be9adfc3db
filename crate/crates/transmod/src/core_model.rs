//! Core hazard families and their log-hazard derivatives.
//!
//! A core model is a parametric family of conditional cumulative hazards
//! `A(x, θ | z)` with hazard rate `α(x, θ, z)`.  Two families are provided:
//! the generalized odds-ratio family (η = 0 is proportional hazards, η = 1
//! proportional odds) and the linear hazard family
//! `α(x, θ | z) = a_θ(z) + x b_θ(z)` with `a_θ(z) = exp(θ₁ᵀz)`,
//! `b_θ(z) = exp(θ₂ᵀz)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("time argument must be nonnegative, got {0}")]
    NegativeTime(f64),
    #[error("cumulative hazard argument must be nonnegative, got {0}")]
    NegativeCumHazard(f64),
    #[error("eta must be nonnegative, got {0}")]
    NegativeEta(f64),
    #[error("dim_theta must be positive")]
    ZeroDimTheta,
    #[error("linear hazard requires an even dim_theta, got {0}")]
    OddDimTheta(usize),
    #[error("covariate bound must be positive, got {0}")]
    BadCovariateBound(f64),
    #[error("covariate component {index} = {value} outside the declared box |z| <= {bound}")]
    CovariateOutOfBounds {
        index: usize,
        value: f64,
        bound: f64,
    },
    #[error("theta has length {got}, model expects {expected}")]
    ThetaDimension { got: usize, expected: usize },
    #[error("z has length {got}, model expects {expected}")]
    CovariateDimension { got: usize, expected: usize },
}

/// Hazard family of the core model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `α(x, θ, z) = e^{θᵀz} [1 + η e^{θᵀz} x]^{-1}`, η ≥ 0.
    OddsRatio { eta: f64 },
    /// `α(x, θ, z) = e^{θ₁ᵀz} + x e^{θ₂ᵀz}` with θ = (θ₁, θ₂).
    LinearHazard,
}

/// A core model together with its parameter dimension and the declared
/// covariate box `|z_j| ≤ covariate_bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreModel {
    #[serde(flatten)]
    pub family: Family,
    pub dim_theta: usize,
    #[serde(default = "default_bound")]
    pub covariate_bound: f64,
}

fn default_bound() -> f64 {
    1.0
}

/// The log-hazard `ℓ = log α` and its derivatives at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct LogHazardDerivs {
    pub ell: f64,
    /// `dℓ/dx`
    pub ell_prime: f64,
    /// `d²ℓ/dx²`
    pub ell_dprime: f64,
    /// `∂ℓ/∂θ`, length `dim_theta`
    pub ell_dot: Vec<f64>,
}

/// Per-subject quantities that do not depend on the time argument; used by
/// the hot loops of the empirical module.
#[derive(Debug, Clone, Copy)]
pub enum SubjectProfile {
    OddsRatio { w: f64 },
    LinearHazard { a: f64, b: f64 },
}

impl CoreModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dim_theta == 0 {
            return Err(ModelError::ZeroDimTheta);
        }
        if !(self.covariate_bound > 0.0) {
            return Err(ModelError::BadCovariateBound(self.covariate_bound));
        }
        match self.family {
            Family::OddsRatio { eta } if eta < 0.0 => Err(ModelError::NegativeEta(eta)),
            Family::LinearHazard if self.dim_theta % 2 != 0 => {
                Err(ModelError::OddDimTheta(self.dim_theta))
            }
            _ => Ok(()),
        }
    }

    /// Covariate dimension implied by `dim_theta`.
    pub fn dim_z(&self) -> usize {
        match self.family {
            Family::OddsRatio { .. } => self.dim_theta,
            Family::LinearHazard => self.dim_theta / 2,
        }
    }

    fn check_args(&self, theta: &[f64], z: &[f64]) -> Result<(), ModelError> {
        if theta.len() != self.dim_theta {
            return Err(ModelError::ThetaDimension {
                got: theta.len(),
                expected: self.dim_theta,
            });
        }
        if z.len() != self.dim_z() {
            return Err(ModelError::CovariateDimension {
                got: z.len(),
                expected: self.dim_z(),
            });
        }
        for (j, &zj) in z.iter().enumerate() {
            if !(zj.abs() <= self.covariate_bound) {
                return Err(ModelError::CovariateOutOfBounds {
                    index: j,
                    value: zj,
                    bound: self.covariate_bound,
                });
            }
        }
        Ok(())
    }

    /// Precomputes the per-subject profile for fast repeated evaluation over
    /// a grid of time points.
    pub fn profile(&self, theta: &[f64], z: &[f64]) -> SubjectProfile {
        match self.family {
            Family::OddsRatio { .. } => SubjectProfile::OddsRatio {
                w: dot(theta, z).exp(),
            },
            Family::LinearHazard => {
                let dz = self.dim_z();
                SubjectProfile::LinearHazard {
                    a: dot(&theta[..dz], z).exp(),
                    b: dot(&theta[dz..], z).exp(),
                }
            }
        }
    }

    /// Hazard and `ℓ′` at `x` given a precomputed profile, filling `ell_dot`.
    /// No argument validation; callers validate once per subject.
    #[inline]
    pub fn eval_fast(&self, p: &SubjectProfile, x: f64, z: &[f64], ell_dot: &mut [f64]) -> (f64, f64) {
        match (*p, self.family) {
            (SubjectProfile::OddsRatio { w }, Family::OddsRatio { eta }) => {
                let denom = 1.0 + eta * w * x;
                let alpha = w / denom;
                let lp = -eta * alpha;
                for (d, &zj) in ell_dot.iter_mut().zip(z) {
                    *d = zj / denom;
                }
                (alpha, lp)
            }
            (SubjectProfile::LinearHazard { a, b }, Family::LinearHazard) => {
                let alpha = a + x * b;
                let lp = b / alpha;
                let dz = z.len();
                for j in 0..dz {
                    ell_dot[j] = a * z[j] / alpha;
                    ell_dot[dz + j] = x * b * z[j] / alpha;
                }
                (alpha, lp)
            }
            _ => unreachable!("profile/family mismatch"),
        }
    }

    /// `α(x, θ, z)`.
    pub fn hazard(&self, x: f64, theta: &[f64], z: &[f64]) -> Result<f64, ModelError> {
        self.check_args(theta, z)?;
        if x < 0.0 || x.is_nan() {
            return Err(ModelError::NegativeTime(x));
        }
        Ok(match self.family {
            Family::OddsRatio { eta } => {
                let w = dot(theta, z).exp();
                w / (1.0 + eta * w * x)
            }
            Family::LinearHazard => {
                let dz = self.dim_z();
                dot(&theta[..dz], z).exp() + x * dot(&theta[dz..], z).exp()
            }
        })
    }

    /// `ℓ = log α` and its first derivatives in `x` and `θ`, plus `ℓ″`.
    pub fn log_hazard_derivs(
        &self,
        x: f64,
        theta: &[f64],
        z: &[f64],
    ) -> Result<LogHazardDerivs, ModelError> {
        self.check_args(theta, z)?;
        if x < 0.0 || x.is_nan() {
            return Err(ModelError::NegativeTime(x));
        }
        Ok(match self.family {
            Family::OddsRatio { eta } => {
                let lin = dot(theta, z);
                let w = lin.exp();
                let denom = 1.0 + eta * w * x;
                let ell = lin - denom.ln();
                let ell_prime = -eta * w / denom;
                let ell_dprime = (eta * w / denom).powi(2);
                let ell_dot = z.iter().map(|&zj| zj / denom).collect();
                LogHazardDerivs {
                    ell,
                    ell_prime,
                    ell_dprime,
                    ell_dot,
                }
            }
            Family::LinearHazard => {
                let dz = self.dim_z();
                let a = dot(&theta[..dz], z).exp();
                let b = dot(&theta[dz..], z).exp();
                let alpha = a + x * b;
                let mut ell_dot = vec![0.0; self.dim_theta];
                for j in 0..dz {
                    ell_dot[j] = a * z[j] / alpha;
                    ell_dot[dz + j] = x * b * z[j] / alpha;
                }
                LogHazardDerivs {
                    ell: alpha.ln(),
                    ell_prime: b / alpha,
                    ell_dprime: -(b / alpha).powi(2),
                    ell_dot,
                }
            }
        })
    }

    /// `A(x, θ, z) = ∫₀ˣ α(u, θ, z) du`.
    pub fn cum_hazard(&self, x: f64, theta: &[f64], z: &[f64]) -> Result<f64, ModelError> {
        self.check_args(theta, z)?;
        if x < 0.0 || x.is_nan() {
            return Err(ModelError::NegativeTime(x));
        }
        Ok(match self.family {
            Family::OddsRatio { eta } => {
                let w = dot(theta, z).exp();
                if eta == 0.0 {
                    w * x
                } else {
                    (eta * w * x).ln_1p() / eta
                }
            }
            Family::LinearHazard => {
                let dz = self.dim_z();
                let a = dot(&theta[..dz], z).exp();
                let b = dot(&theta[dz..], z).exp();
                a * x + 0.5 * b * x * x
            }
        })
    }

    /// Inverse of [`CoreModel::cum_hazard`] in `x`; closed form for both
    /// families.
    pub fn inverse_cum_hazard(&self, a: f64, theta: &[f64], z: &[f64]) -> Result<f64, ModelError> {
        self.check_args(theta, z)?;
        if a < 0.0 || a.is_nan() {
            return Err(ModelError::NegativeCumHazard(a));
        }
        Ok(match self.family {
            Family::OddsRatio { eta } => {
                let w = dot(theta, z).exp();
                if eta == 0.0 {
                    a / w
                } else {
                    (eta * a).exp_m1() / (eta * w)
                }
            }
            Family::LinearHazard => {
                let dz = self.dim_z();
                let ca = dot(&theta[..dz], z).exp();
                let cb = dot(&theta[dz..], z).exp();
                // positive root of cb/2 x² + ca x = a, in the form that stays
                // stable as cb → 0
                2.0 * a / (ca + (ca * ca + 2.0 * cb * a).sqrt())
            }
        })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One envelope check of [`check_regularity`].
#[derive(Debug, Clone)]
pub struct RegularityCheck {
    pub name: String,
    pub pass: bool,
    pub worst_value: f64,
    /// `(x, θ, z)` where the worst value was attained.
    pub worst_location: (f64, Vec<f64>, Vec<f64>),
}

/// Report of the numeric envelope checks.
#[derive(Debug, Clone)]
pub struct RegularityReport {
    pub pass: bool,
    pub checks: Vec<RegularityCheck>,
}

/// Numerically verifies the envelope conditions on the declared boxes:
/// `|ℓ′|` and `|ℓ″|` bounded by a decreasing envelope and `|ℓ̇|` bounded,
/// evaluated on corner points of the boxes crossed with `x_grid`.
///
/// Unbounded boxes fail immediately: the envelope assumptions require
/// bounded covariates and parameters.
pub fn check_regularity(
    model: &CoreModel,
    theta_box: &[(f64, f64)],
    z_box: &[(f64, f64)],
    x_grid: &[f64],
) -> RegularityReport {
    let mut checks = Vec::new();
    let finite = theta_box
        .iter()
        .chain(z_box.iter())
        .all(|&(lo, hi)| lo.is_finite() && hi.is_finite() && lo <= hi)
        && theta_box.len() == model.dim_theta
        && z_box.len() == model.dim_z()
        && z_box
            .iter()
            .all(|&(lo, hi)| lo >= -model.covariate_bound && hi <= model.covariate_bound);
    if !finite {
        checks.push(RegularityCheck {
            name: "bounded parameter and covariate boxes".into(),
            pass: false,
            worst_value: f64::INFINITY,
            worst_location: (0.0, vec![], vec![]),
        });
        return RegularityReport {
            pass: false,
            checks,
        };
    }

    let thetas = corners(theta_box);
    let zs = corners(z_box);
    // crude global envelope constants from the declared boxes
    let d0 = model.covariate_bound;
    let mut ldot_worst = (f64::NEG_INFINITY, (0.0, vec![], vec![]));
    let mut lp_worst = (f64::NEG_INFINITY, (0.0, vec![], vec![]));
    let mut lpp_worst = (f64::NEG_INFINITY, (0.0, vec![], vec![]));
    let mut lp_decreasing = true;
    for theta in &thetas {
        for z in &zs {
            let mut prev_abs_lp = f64::INFINITY;
            for &x in x_grid {
                let d = match model.log_hazard_derivs(x, theta, z) {
                    Ok(d) => d,
                    Err(_) => {
                        checks.push(RegularityCheck {
                            name: "hazard evaluation".into(),
                            pass: false,
                            worst_value: f64::NAN,
                            worst_location: (x, theta.clone(), z.clone()),
                        });
                        return RegularityReport {
                            pass: false,
                            checks,
                        };
                    }
                };
                let loc = (x, theta.clone(), z.clone());
                let ldot_norm = d.ell_dot.iter().map(|v| v.abs()).fold(0.0, f64::max);
                if ldot_norm > ldot_worst.0 {
                    ldot_worst = (ldot_norm, loc.clone());
                }
                if d.ell_prime.abs() > lp_worst.0 {
                    lp_worst = (d.ell_prime.abs(), loc.clone());
                }
                if d.ell_dprime.abs() > lpp_worst.0 {
                    lpp_worst = (d.ell_dprime.abs(), loc);
                }
                // the odds-ratio envelope for -ℓ′ is decreasing in x; for the
                // linear hazard ℓ′ itself is decreasing
                if d.ell_prime.abs() > prev_abs_lp + 1e-12 {
                    lp_decreasing = false;
                }
                prev_abs_lp = d.ell_prime.abs();
            }
        }
    }

    // |ℓ̇| envelope: d₀ for the odds-ratio model, d₀(1 + x_max·const) is not
    // needed for the linear hazard since ℓ̇ components are bounded by |z|
    let ldot_bound = match model.family {
        Family::OddsRatio { .. } => d0 + 1e-12,
        Family::LinearHazard => d0 + 1e-12,
    };
    checks.push(RegularityCheck {
        name: format!("|l_dot| <= {ldot_bound:.3}"),
        pass: ldot_worst.0 <= ldot_bound,
        worst_value: ldot_worst.0,
        worst_location: ldot_worst.1,
    });
    checks.push(RegularityCheck {
        name: "|l'| finite".into(),
        pass: lp_worst.0.is_finite(),
        worst_value: lp_worst.0,
        worst_location: lp_worst.1,
    });
    checks.push(RegularityCheck {
        name: "|l''| finite".into(),
        pass: lpp_worst.0.is_finite(),
        worst_value: lpp_worst.0,
        worst_location: lpp_worst.1,
    });
    checks.push(RegularityCheck {
        name: "|l'| nonincreasing along x grid".into(),
        pass: lp_decreasing,
        worst_value: if lp_decreasing { 0.0 } else { 1.0 },
        worst_location: (0.0, vec![], vec![]),
    });
    let pass = checks.iter().all(|c| c.pass);
    RegularityReport { pass, checks }
}

fn corners(bx: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for &(lo, hi) in bx {
        let mut next = Vec::with_capacity(out.len() * 2);
        for v in &out {
            let mut a = v.clone();
            a.push(lo);
            next.push(a);
            if hi != lo {
                let mut b = v.clone();
                b.push(hi);
                next.push(b);
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn odds_ratio(eta: f64) -> CoreModel {
        CoreModel {
            family: Family::OddsRatio { eta },
            dim_theta: 1,
            covariate_bound: 1.0,
        }
    }

    fn linear() -> CoreModel {
        CoreModel {
            family: Family::LinearHazard,
            dim_theta: 2,
            covariate_bound: 1.0,
        }
    }

    #[test]
    fn hazard_examples() {
        // η = 0: hazard constant in x
        let m = odds_ratio(0.0);
        assert_abs_diff_eq!(
            m.hazard(5.0, &[0.7], &[1.0]).unwrap(),
            0.7f64.exp(),
            epsilon = 1e-12
        );
        // η = 1 closed form
        let m = odds_ratio(1.0);
        let w = 0.5f64.exp();
        assert_abs_diff_eq!(
            m.hazard(2.0, &[0.5], &[1.0]).unwrap(),
            w / (1.0 + 2.0 * w),
            epsilon = 1e-14
        );
        assert!((m.hazard(2.0, &[0.5], &[1.0]).unwrap() - 0.38365).abs() < 1e-4);
        // linear hazard a=1, b=2 at x=3 -> 7 (theta chosen so exp terms hit a, b)
        let m = linear();
        let theta = [0.0, 2.0f64.ln()];
        assert_abs_diff_eq!(m.hazard(3.0, &theta, &[1.0]).unwrap(), 7.0, epsilon = 1e-12);
    }

    #[test]
    fn hazard_rejects_bad_args() {
        let m = odds_ratio(1.0);
        assert!(matches!(
            m.hazard(-1.0, &[0.5], &[1.0]),
            Err(ModelError::NegativeTime(_))
        ));
        assert!(matches!(
            m.hazard(1.0, &[0.5], &[2.0]),
            Err(ModelError::CovariateOutOfBounds { .. })
        ));
    }

    #[test]
    fn log_hazard_derivs_examples() {
        let m = odds_ratio(0.0);
        let d = m.log_hazard_derivs(3.0, &[0.7], &[0.4]).unwrap();
        assert_eq!(d.ell_prime, 0.0);
        assert_eq!(d.ell_dprime, 0.0);
        assert_eq!(d.ell_dot, vec![0.4]);

        let m = odds_ratio(1.0);
        let d = m.log_hazard_derivs(2.0, &[0.5], &[1.0]).unwrap();
        let denom = 1.0 + 2.0 * 0.5f64.exp();
        assert_abs_diff_eq!(d.ell_prime, -0.5f64.exp() / denom, epsilon = 1e-14);
        assert_abs_diff_eq!(d.ell_dot[0], 1.0 / denom, epsilon = 1e-14);

        let m = linear();
        let theta = [0.0, 2.0f64.ln()];
        let d = m.log_hazard_derivs(3.0, &theta, &[1.0]).unwrap();
        assert_abs_diff_eq!(d.ell_prime, 2.0 / 7.0, epsilon = 1e-14);
    }

    #[test]
    fn cum_hazard_examples() {
        let m = odds_ratio(1.0);
        assert_abs_diff_eq!(
            m.cum_hazard(1.0, &[0.0], &[0.0]).unwrap(),
            2.0f64.ln(),
            epsilon = 1e-13
        );
        let m = odds_ratio(0.0);
        assert_abs_diff_eq!(
            m.cum_hazard(2.0, &[0.7], &[1.0]).unwrap(),
            2.0 * 0.7f64.exp(),
            epsilon = 1e-13
        );
        let m = linear();
        let theta = [0.0, 2.0f64.ln()];
        assert_abs_diff_eq!(m.cum_hazard(3.0, &theta, &[1.0]).unwrap(), 12.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse_cum_hazard_examples() {
        let m = odds_ratio(1.0);
        assert_abs_diff_eq!(
            m.inverse_cum_hazard(2.0f64.ln(), &[0.0], &[0.0]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_eq!(m.inverse_cum_hazard(0.0, &[0.0], &[0.0]).unwrap(), 0.0);
        let ph = odds_ratio(0.0);
        assert_abs_diff_eq!(
            ph.inverse_cum_hazard(3.5, &[0.0], &[0.0]).unwrap(),
            3.5,
            epsilon = 1e-14
        );
        assert!(matches!(
            m.inverse_cum_hazard(-0.1, &[0.0], &[0.0]),
            Err(ModelError::NegativeCumHazard(_))
        ));
    }

    #[test]
    fn finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let models = [odds_ratio(1.0), odds_ratio(0.3), linear()];
        let h = 1e-5;
        for _ in 0..200 {
            let m = &models[rng.gen_range(0..3)];
            let x: f64 = rng.gen_range(0.01..5.0);
            let theta: Vec<f64> = (0..m.dim_theta).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z: Vec<f64> = (0..m.dim_z()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d = m.log_hazard_derivs(x, &theta, &z).unwrap();
            let lp = m.log_hazard_derivs(x + h, &theta, &z).unwrap();
            let lm = m.log_hazard_derivs(x - h, &theta, &z).unwrap();
            assert!((d.ell_prime - (lp.ell - lm.ell) / (2.0 * h)).abs() < 1e-6);
            assert!((d.ell_dprime - (lp.ell_prime - lm.ell_prime) / (2.0 * h)).abs() < 1e-6);
            for j in 0..m.dim_theta {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += h;
                tm[j] -= h;
                let ep = m.log_hazard_derivs(x, &tp, &z).unwrap().ell;
                let em = m.log_hazard_derivs(x, &tm, &z).unwrap().ell;
                assert!((d.ell_dot[j] - (ep - em) / (2.0 * h)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cum_hazard_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let models = [odds_ratio(1.0), odds_ratio(0.0), linear()];
        for _ in 0..200 {
            let m = &models[rng.gen_range(0..3)];
            let x: f64 = rng.gen_range(0.0..8.0);
            let theta: Vec<f64> = (0..m.dim_theta).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z: Vec<f64> = (0..m.dim_z()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = m.cum_hazard(x, &theta, &z).unwrap();
            let back = m.inverse_cum_hazard(a, &theta, &z).unwrap();
            let scale = x.abs().max(1e-300);
            assert!((back - x).abs() / scale < 1e-12 || (back - x).abs() < 1e-12);
        }
    }

    #[test]
    fn eta_continuity_at_zero() {
        let tiny = odds_ratio(1e-10);
        let ph = odds_ratio(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x: f64 = rng.gen_range(0.0..5.0);
            let theta = [rng.gen_range(-1.0..1.0)];
            let z = [rng.gen_range(-1.0..1.0)];
            assert!(
                (tiny.hazard(x, &theta, &z).unwrap() - ph.hazard(x, &theta, &z).unwrap()).abs()
                    < 1e-6
            );
            assert!(
                (tiny.cum_hazard(x, &theta, &z).unwrap() - ph.cum_hazard(x, &theta, &z).unwrap())
                    .abs()
                    < 1e-6
            );
            let dt = tiny.log_hazard_derivs(x, &theta, &z).unwrap();
            let dp = ph.log_hazard_derivs(x, &theta, &z).unwrap();
            assert!((dt.ell_prime - dp.ell_prime).abs() < 1e-6);
            assert!((dt.ell_dot[0] - dp.ell_dot[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn eval_fast_matches_slow_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in [odds_ratio(1.0), linear()] {
            let theta: Vec<f64> = (0..m.dim_theta).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z: Vec<f64> = (0..m.dim_z()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = m.profile(&theta, &z);
            let mut ldot = vec![0.0; m.dim_theta];
            for _ in 0..20 {
                let x: f64 = rng.gen_range(0.0..5.0);
                let (alpha, lp) = m.eval_fast(&p, x, &z, &mut ldot);
                let d = m.log_hazard_derivs(x, &theta, &z).unwrap();
                assert_abs_diff_eq!(alpha, m.hazard(x, &theta, &z).unwrap(), epsilon = 1e-13);
                assert_abs_diff_eq!(lp, d.ell_prime, epsilon = 1e-13);
                for j in 0..m.dim_theta {
                    assert_abs_diff_eq!(ldot[j], d.ell_dot[j], epsilon = 1e-13);
                }
            }
        }
    }

    #[test]
    fn regularity_report() {
        let m = odds_ratio(1.0);
        let x_grid: Vec<f64> = (0..50).map(|k| 0.1 * k as f64).collect();
        let rep = check_regularity(&m, &[(-1.0, 1.0)], &[(-1.0, 1.0)], &x_grid);
        assert!(rep.pass, "{:?}", rep.checks);

        let m = linear();
        let rep = check_regularity(&m, &[(-0.5, 0.5), (-0.5, 0.5)], &[(-1.0, 1.0)], &x_grid);
        // linear hazard: ℓ′ = b/(a+xb) is decreasing, ℓ̇ bounded
        assert!(rep.pass, "{:?}", rep.checks);

        let m = odds_ratio(1.0);
        let rep = check_regularity(&m, &[(-1.0, 1.0)], &[(f64::NEG_INFINITY, f64::INFINITY)], &x_grid);
        assert!(!rep.pass);
    }

    #[test]
    fn model_spec_json() {
        let m: CoreModel =
            serde_json::from_str(r#"{"family":"odds_ratio","eta":1.0,"dim_theta":2}"#).unwrap();
        assert_eq!(m.family, Family::OddsRatio { eta: 1.0 });
        assert_eq!(m.dim_theta, 2);
        assert_eq!(m.covariate_bound, 1.0);
        let m: CoreModel =
            serde_json::from_str(r#"{"family":"linear_hazard","dim_theta":4}"#).unwrap();
        assert_eq!(m.family, Family::LinearHazard);
        assert_eq!(m.dim_z(), 2);
    }
}
