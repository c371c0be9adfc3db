//! Parameter estimation: damped Newton Z-estimation on the score, the
//! one-step correction of a preliminary estimator, and plug-in confidence
//! intervals.

use crate::core_model::CoreModel;
use crate::dataset::CensoredSample;
use crate::empirical::{FSpec, FitGammaOpts};
use crate::score::{score, v_matrix, ScoreError, ScoreOpts};
use crate::step::StepFunction;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("score evaluation failed: {0}")]
    Score(#[from] ScoreError),
    #[error(
        "no convergence after {iterations} iterations (score norm {score_norm:.3e}, tol {tol:.3e})"
    )]
    MaxIter {
        iterations: usize,
        score_norm: f64,
        tol: f64,
    },
    #[error("iterate left the trust region of radius {radius} around the initial point")]
    TrustRegionEscape { radius: f64 },
    #[error("step halving failed to decrease the score norm at iteration {0}")]
    StalledLineSearch(usize),
}

#[derive(Clone, Debug)]
pub struct EstimateOpts {
    pub tol: f64,
    pub max_iter: usize,
    /// Sup-norm radius around `theta_init` the iterates may not leave.
    pub trust_radius: f64,
    pub fspec: FSpec,
    pub gamma: FitGammaOpts,
}

impl Default for EstimateOpts {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
            trust_radius: 1.0,
            fspec: FSpec::LDot,
            gamma: FitGammaOpts::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    ZEstimator,
    OneStep,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub kappa: f64,
    pub fredholm_residual: f64,
    pub v_condition: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    pub gamma_hat: StepFunction,
    /// `V⁻¹ Σ₀ V⁻ᵀ / n` at `θ̂`.
    pub cov_theta: DMatrix<f64>,
    pub se: Vec<f64>,
    pub score_norm_at_solution: f64,
    pub iterations: usize,
    pub method: Method,
    pub diagnostics: Diagnostics,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

struct Eval {
    ctx: crate::score::ScoreContext,
    out: crate::score::ScoreOutput,
    norm: f64,
}

fn eval_score(
    sample: &CensoredSample,
    model: &CoreModel,
    theta: &[f64],
    opts: &EstimateOpts,
    warm: Option<Vec<f64>>,
) -> Result<Eval, ScoreError> {
    let sopts = ScoreOpts {
        fspec: opts.fspec.clone(),
        gamma: opts.gamma,
        warm_gamma: warm,
    };
    let (ctx, out) = score(sample, model, theta, &sopts)?;
    let norm = sup_norm(&out.u);
    Ok(Eval { ctx, out, norm })
}

fn finish(
    sample: &CensoredSample,
    eval: Eval,
    theta: Vec<f64>,
    iterations: usize,
    method: Method,
) -> Result<FitResult, EstimateError> {
    let v = v_matrix(&eval.ctx)?;
    let n = sample.n() as f64;
    let vinv = v
        .clone()
        .lu()
        .try_inverse()
        .ok_or(ScoreError::SingularV(eval.out.v_condition))?;
    let cov = (&vinv * &eval.out.sigma0 * vinv.transpose()) / n;
    let se = (0..theta.len()).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    Ok(FitResult {
        theta_hat: theta,
        gamma_hat: eval.ctx.gamma.clone(),
        cov_theta: cov,
        se,
        score_norm_at_solution: eval.norm,
        iterations,
        method: Method::ZEstimator,
        diagnostics: Diagnostics {
            kappa: eval.ctx.system.kappa,
            fredholm_residual: eval.ctx.phi.residual,
            v_condition: eval.out.v_condition,
        },
    })
    .map(|mut fit| {
        fit.method = method;
        fit
    })
}

/// Root-finding on `Uₙ(f,θ) = 0` by damped Newton steps `θ ← θ + V⁻¹ u`,
/// halving the step until the score norm decreases.
pub fn z_estimate(
    sample: &CensoredSample,
    model: &CoreModel,
    theta_init: &[f64],
    opts: &EstimateOpts,
) -> Result<FitResult, EstimateError> {
    let mut theta = theta_init.to_vec();
    let mut eval = eval_score(sample, model, &theta, opts, None)?;
    for iter in 0..opts.max_iter {
        if eval.norm <= opts.tol {
            return finish(sample, eval, theta, iter, Method::ZEstimator);
        }
        let v = v_matrix(&eval.ctx)?;
        let dir = v
            .clone()
            .lu()
            .solve(&DVector::from_column_slice(&eval.out.u))
            .ok_or(ScoreError::SingularV(eval.out.v_condition))?;
        let mut step: Vec<f64> = dir.iter().cloned().collect();
        // cap the raw Newton step at half the trust radius
        let len = sup_norm(&step);
        if len > opts.trust_radius / 2.0 {
            let scale = opts.trust_radius / (2.0 * len);
            for s in &mut step {
                *s *= scale;
            }
        }
        let warm = eval.ctx.gamma.values().to_vec();
        let mut lambda = 1.0;
        let mut accepted = None;
        let mut any_in_region = false;
        for _ in 0..12 {
            let trial: Vec<f64> = theta
                .iter()
                .zip(&step)
                .map(|(t, s)| t + lambda * s)
                .collect();
            // out-of-region trials are shortened like rejected steps
            if trial
                .iter()
                .zip(theta_init)
                .any(|(t, t0)| (t - t0).abs() > opts.trust_radius)
            {
                lambda *= 0.5;
                continue;
            }
            any_in_region = true;
            let cand = eval_score(sample, model, &trial, opts, Some(warm.clone()))?;
            if cand.norm < eval.norm {
                accepted = Some((trial, cand));
                break;
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((trial, cand)) => {
                theta = trial;
                eval = cand;
            }
            None if !any_in_region => {
                return Err(EstimateError::TrustRegionEscape {
                    radius: opts.trust_radius,
                })
            }
            None => return Err(EstimateError::StalledLineSearch(iter)),
        }
    }
    if eval.norm <= opts.tol {
        return finish(sample, eval, theta, opts.max_iter, Method::ZEstimator);
    }
    Err(EstimateError::MaxIter {
        iterations: opts.max_iter,
        score_norm: eval.norm,
        tol: opts.tol,
    })
}

/// Single Newton correction `θ̂ = θ̂⁽⁰⁾ + Vₙ(θ̂⁽⁰⁾)⁻¹ Uₙ(θ̂⁽⁰⁾)` of a
/// √n-consistent preliminary estimator.
pub fn one_step(
    sample: &CensoredSample,
    model: &CoreModel,
    theta0_hat: &[f64],
    opts: &EstimateOpts,
) -> Result<FitResult, EstimateError> {
    let eval0 = eval_score(sample, model, theta0_hat, opts, None)?;
    let v = v_matrix(&eval0.ctx)?;
    let dir = v
        .clone()
        .lu()
        .solve(&DVector::from_column_slice(&eval0.out.u))
        .ok_or(ScoreError::SingularV(eval0.out.v_condition))?;
    let theta: Vec<f64> = theta0_hat
        .iter()
        .zip(dir.iter())
        .map(|(t, d)| t + d)
        .collect();
    let warm = eval0.ctx.gamma.values().to_vec();
    let eval = eval_score(sample, model, &theta, opts, Some(warm))?;
    finish(sample, eval, theta, 1, Method::OneStep)
}

/// `θ̂_j ± q_{(1+level)/2} · se_j` per component.
pub fn confidence_intervals(fit: &FitResult, level: f64) -> Vec<(f64, f64)> {
    assert!(level > 0.0 && level < 1.0, "level must be in (0,1)");
    let q = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf((1.0 + level) / 2.0);
    fit.theta_hat
        .iter()
        .zip(&fit.se)
        .map(|(t, s)| (t - q * s, t + q * s))
        .collect()
}
