//! Sample functionals on the event grid: risk-set averages `ŝ[f]`, `ê[f]`,
//! conditional covariance operators, the cumulative measures `C`, `B`, the
//! exponential interval function `𝒫(u,t)`, the self-consistent
//! transformation estimator `Γ_{nθ}` and the Volterra solution `D[f]`.

use crate::core_model::{CoreModel, ModelError, SubjectProfile};
use crate::dataset::CensoredSample;
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmpError {
    #[error("invalid model arguments: {0}")]
    Model(#[from] ModelError),
    #[error("gamma has length {got}, grid has {expected} points")]
    GridMismatch { got: usize, expected: usize },
    #[error("gamma must be nonnegative and nondecreasing")]
    GammaNotMonotone,
    #[error(
        "transformation fixed point did not converge after {iterations} iterations \
         (residual {residual:.3e}, tolerance {tol:.3e})"
    )]
    GammaNoConvergence {
        iterations: usize,
        residual: f64,
        tol: f64,
    },
    #[error("log P0 magnitude {0:.1} exceeds the overflow guard 300; kappa blow-up")]
    LogP0Overflow(f64),
}

/// Choice of the direction function `f(x, θ, z)` entering the score.
#[derive(Clone)]
pub enum FSpec {
    /// Efficient-score direction `f = ℓ̇` (dimension `dim_theta`).
    LDot,
    /// User-supplied bounded function of `(x, z)`; `f(x, z, out)` fills
    /// `out` with `dim` components.
    User {
        dim: usize,
        f: Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>,
    },
}

impl FSpec {
    pub fn dim(&self, model: &CoreModel) -> usize {
        match self {
            FSpec::LDot => model.dim_theta,
            FSpec::User { dim, .. } => *dim,
        }
    }
}

impl std::fmt::Debug for FSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FSpec::LDot => write!(f, "FSpec::LDot"),
            FSpec::User { dim, .. } => write!(f, "FSpec::User(dim={dim})"),
        }
    }
}

/// All per-grid-point sample functionals needed downstream.  Vector and
/// matrix valued entries are stored flat, row-major per grid point:
/// `e_f[k*df + j]`, `var_f[(k*df + j1)*df + j2]`.
#[derive(Debug, Clone)]
pub struct Functionals {
    pub grid: Arc<Vec<f64>>,
    /// Dimension of `f`.
    pub df: usize,
    /// Dimension of `ℓ̇` (= `dim_theta`).
    pub d: usize,
    /// `Γ(t_k)` used for the evaluation.
    pub gamma: Vec<f64>,
    /// `ŝ[1](t_k)`.
    pub s1: Vec<f64>,
    /// `ŝ[ℓ′](t_k)`.
    pub s_lp: Vec<f64>,
    /// `ê[f](t_k)`, `m × df`.
    pub e_f: Vec<f64>,
    /// `ê[ℓ̇](t_k)`, `m × d`.
    pub e_ldot: Vec<f64>,
    /// `ê[ℓ′](t_k)`.
    pub e_lp: Vec<f64>,
    /// `v̂ar[ℓ′](t_k)`.
    pub var_lp: Vec<f64>,
    /// `v̂ar[f](t_k)`, `m × df × df`.
    pub var_f: Vec<f64>,
    /// `ĉov[f, ℓ′](t_k)`, `m × df`.
    pub cov_f_lp: Vec<f64>,
    /// `ĉov[f, ℓ̇](t_k)`, `m × df × d`.
    pub cov_f_ldot: Vec<f64>,
    /// `ĉov[ℓ′, ℓ̇](t_k)`, `m × d`.
    pub cov_lp_ldot: Vec<f64>,
    /// `ΔN.(t_k)`.
    pub dn: Vec<f64>,
    /// `ΔC(t_k) = ŝ[1](t_k)⁻² ΔN.(t_k)`.
    pub dc: Vec<f64>,
    /// `ΔB(t_k) = v̂ar[ℓ′](t_k) ΔN.(t_k)`.
    pub db: Vec<f64>,
    /// `log 𝒫(0, t_k)`, cumulative: `−Σ_{j≤k} ŝ[ℓ′](t_j) ΔC(t_j)`.
    pub log_p0: Vec<f64>,
}

impl Functionals {
    pub fn m(&self) -> usize {
        self.grid.len()
    }

    /// `𝒫(t_u, t_t) = exp(logP0(t) − logP0(u))`; index `usize::MAX` stands
    /// for time 0.
    pub fn p(&self, u: usize, t: usize) -> f64 {
        let lu = if u == usize::MAX { 0.0 } else { self.log_p0[u] };
        let lt = if t == usize::MAX { 0.0 } else { self.log_p0[t] };
        (lt - lu).exp()
    }

    /// `𝒫(0, t_k)`.
    pub fn p0(&self, k: usize) -> f64 {
        self.log_p0[k].exp()
    }

    /// `ŝ[f](t_k) = ê[f](t_k) ŝ[1](t_k)` for the stored `f`.
    pub fn s_f(&self, k: usize, j: usize) -> f64 {
        self.e_f[k * self.df + j] * self.s1[k]
    }

    /// `ŝ[ℓ̇](t_k)` componentwise.
    pub fn s_ldot(&self, k: usize, j: usize) -> f64 {
        self.e_ldot[k * self.d + j] * self.s1[k]
    }
}

fn validate_gamma(sample: &CensoredSample, gamma: &[f64]) -> Result<(), EmpError> {
    if gamma.len() != sample.num_events() {
        return Err(EmpError::GridMismatch {
            got: gamma.len(),
            expected: sample.num_events(),
        });
    }
    let mut prev = 0.0;
    for &g in gamma {
        if !(g >= prev) {
            return Err(EmpError::GammaNotMonotone);
        }
        prev = g;
    }
    Ok(())
}

fn profiles(
    sample: &CensoredSample,
    model: &CoreModel,
    theta: &[f64],
) -> Result<Vec<SubjectProfile>, EmpError> {
    // one validated evaluation per subject; the hot loops skip checks
    model.hazard(0.0, theta, &sample.records[0].z)?;
    Ok(sample
        .records
        .iter()
        .map(|r| model.profile(theta, &r.z))
        .collect())
}

/// `ŝ[1](t_k)` for all grid points, with `α` evaluated at the left limit
/// `Γ(t_{k−1})`.  Predictable evaluation keeps the self-consistency
/// recursion explicit; for hazards that ignore the running `Γ` value it
/// coincides with evaluation at `Γ(t_k)`.
fn s1_values_left(
    sample: &CensoredSample,
    model: &CoreModel,
    profs: &[SubjectProfile],
    gamma: &[f64],
) -> Vec<f64> {
    let n = sample.n() as f64;
    let d = model.dim_theta;
    (0..sample.num_events())
        .into_par_iter()
        .map(|k| {
            let x = if k == 0 { 0.0 } else { gamma[k - 1] };
            let mut scratch = vec![0.0; d];
            let mut acc = 0.0;
            for i in sample.risk_start[k]..sample.n() {
                let (alpha, _) =
                    model.eval_fast(&profs[i], x, &sample.records[i].z, &mut scratch);
                acc += alpha;
            }
            acc / n
        })
        .collect()
}

/// Risk-set average `ŝ[f]` for a fixed `Γ` and `θ`; one [`crate::step::StepFunction`]
/// per component of `f`.
pub fn s_hat(
    sample: &CensoredSample,
    model: &CoreModel,
    gamma: &crate::step::StepFunction,
    theta: &[f64],
    fspec: &FSpec,
) -> Result<Vec<crate::step::StepFunction>, EmpError> {
    validate_gamma(sample, gamma.values())?;
    let fx = conditional_moments(sample, model, gamma.values(), theta, fspec)?;
    let df = fx.df;
    let mut out = Vec::with_capacity(df);
    for j in 0..df {
        let vals: Vec<f64> = (0..fx.m()).map(|k| fx.s_f(k, j)).collect();
        out.push(
            crate::step::StepFunction::new(sample.event_times.clone(), vals, 0.0)
                .expect("grid length"),
        );
    }
    Ok(out)
}

/// Computes every conditional moment of [`Functionals`] in one pass over the
/// risk sets.
pub fn conditional_moments(
    sample: &CensoredSample,
    model: &CoreModel,
    gamma: &[f64],
    theta: &[f64],
    fspec: &FSpec,
) -> Result<Functionals, EmpError> {
    validate_gamma(sample, gamma)?;
    let profs = profiles(sample, model, theta)?;
    let m = sample.num_events();
    let d = model.dim_theta;
    let df = fspec.dim(model);
    let n = sample.n() as f64;
    let f_is_ldot = matches!(fspec, FSpec::LDot);

    struct Row {
        s1: f64,
        slp: f64,
        slplp: f64,
        sf: Vec<f64>,
        sldot: Vec<f64>,
        sflp: Vec<f64>,
        sff: Vec<f64>,
        sfldot: Vec<f64>,
        slpldot: Vec<f64>,
    }

    let rows: Vec<Row> = (0..m)
        .into_par_iter()
        .map(|k| {
            let x = gamma[k];
            let mut ldot = vec![0.0; d];
            let mut fbuf = vec![0.0; df];
            let mut row = Row {
                s1: 0.0,
                slp: 0.0,
                slplp: 0.0,
                sf: vec![0.0; df],
                sldot: vec![0.0; d],
                sflp: vec![0.0; df],
                sff: vec![0.0; df * df],
                sfldot: vec![0.0; df * d],
                slpldot: vec![0.0; d],
            };
            for i in sample.risk_start[k]..sample.n() {
                let z = &sample.records[i].z;
                let (alpha, lp) = model.eval_fast(&profs[i], x, z, &mut ldot);
                let fv: &[f64] = match fspec {
                    FSpec::LDot => &ldot,
                    FSpec::User { f, .. } => {
                        f(x, z, &mut fbuf);
                        &fbuf
                    }
                };
                row.s1 += alpha;
                row.slp += lp * alpha;
                row.slplp += lp * lp * alpha;
                for j in 0..df {
                    let fa = fv[j] * alpha;
                    row.sf[j] += fa;
                    row.sflp[j] += fv[j] * lp * alpha;
                    for j2 in 0..df {
                        row.sff[j * df + j2] += fa * fv[j2];
                    }
                }
                if f_is_ldot {
                    // ℓ̇ moments coincide with the f moments
                } else {
                    for j in 0..d {
                        row.sldot[j] += ldot[j] * alpha;
                    }
                    for j in 0..df {
                        for j2 in 0..d {
                            row.sfldot[j * d + j2] += fv[j] * ldot[j2] * alpha;
                        }
                    }
                }
                for j in 0..d {
                    row.slpldot[j] += lp * ldot[j] * alpha;
                }
            }
            row.s1 /= n;
            row.slp /= n;
            row.slplp /= n;
            for v in row
                .sf
                .iter_mut()
                .chain(row.sldot.iter_mut())
                .chain(row.sflp.iter_mut())
                .chain(row.sff.iter_mut())
                .chain(row.sfldot.iter_mut())
                .chain(row.slpldot.iter_mut())
            {
                *v /= n;
            }
            row
        })
        .collect();

    let mut fx = Functionals {
        grid: sample.event_times.clone(),
        df,
        d,
        gamma: gamma.to_vec(),
        s1: Vec::with_capacity(m),
        s_lp: Vec::with_capacity(m),
        e_f: Vec::with_capacity(m * df),
        e_ldot: Vec::with_capacity(m * d),
        e_lp: Vec::with_capacity(m),
        var_lp: Vec::with_capacity(m),
        var_f: Vec::with_capacity(m * df * df),
        cov_f_lp: Vec::with_capacity(m * df),
        cov_f_ldot: Vec::with_capacity(m * df * d),
        cov_lp_ldot: Vec::with_capacity(m * d),
        dn: sample.event_counts.clone(),
        dc: Vec::with_capacity(m),
        db: Vec::with_capacity(m),
        log_p0: Vec::with_capacity(m),
    };

    let mut logp = 0.0;
    for (k, row) in rows.iter().enumerate() {
        let s1 = row.s1;
        fx.s1.push(s1);
        fx.s_lp.push(row.slp);
        let e_lp = row.slp / s1;
        fx.e_lp.push(e_lp);
        // conditional variances can go a hair negative from cancellation
        let var_lp = (row.slplp / s1 - e_lp * e_lp).max(0.0);
        fx.var_lp.push(var_lp);
        let e_f: Vec<f64> = row.sf.iter().map(|v| v / s1).collect();
        let e_ldot: Vec<f64> = if f_is_ldot {
            e_f.clone()
        } else {
            row.sldot.iter().map(|v| v / s1).collect()
        };
        for j in 0..df {
            fx.cov_f_lp.push(row.sflp[j] / s1 - e_f[j] * e_lp);
            for j2 in 0..df {
                fx.var_f.push(row.sff[j * df + j2] / s1 - e_f[j] * e_f[j2]);
            }
            for j2 in 0..d {
                let sfl = if f_is_ldot {
                    row.sff[j * df + j2]
                } else {
                    row.sfldot[j * d + j2]
                };
                fx.cov_f_ldot.push(sfl / s1 - e_f[j] * e_ldot[j2]);
            }
        }
        for j in 0..d {
            fx.cov_lp_ldot.push(row.slpldot[j] / s1 - e_lp * e_ldot[j]);
        }
        fx.e_f.extend_from_slice(&e_f);
        fx.e_ldot.extend_from_slice(&e_ldot);
        let dc = fx.dn[k] / (s1 * s1);
        fx.dc.push(dc);
        fx.db.push(var_lp * fx.dn[k]);
        logp -= row.slp * dc;
        if logp.abs() > 300.0 {
            return Err(EmpError::LogP0Overflow(logp.abs()));
        }
        fx.log_p0.push(logp);
    }
    Ok(fx)
}

/// `Γ̂_{nθ}(t_k) = Σ_{j≤k} ΔN.(t_j) / ŝ[1](t_j, Γ, θ)` with `α` evaluated
/// predictably at the left limit `Γ(t_{j−1})`.  This is both the fixed-point
/// map for fitting `Γ` and the `Γ̂ − Γ` discrepancy entering the score; the
/// fitted transformation reproduces itself exactly.
pub fn gamma_check(
    sample: &CensoredSample,
    model: &CoreModel,
    gamma: &[f64],
    theta: &[f64],
) -> Result<Vec<f64>, EmpError> {
    validate_gamma(sample, gamma)?;
    let profs = profiles(sample, model, theta)?;
    let s1 = s1_values_left(sample, model, &profs, gamma);
    let mut out = Vec::with_capacity(gamma.len());
    let mut acc = 0.0;
    for k in 0..gamma.len() {
        acc += sample.event_counts[k] / s1[k];
        out.push(acc);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct FitGammaOpts {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitGammaOpts {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

/// Fits the transformation `Γ_{nθ}` by the forward self-consistency
/// recursion followed by damped fixed-point iteration of [`gamma_check`].
///
/// The initial pass evaluates `α` at the left limit `Γ(t_{k−1})`, which is
/// exact for hazards that do not depend on the running `Γ` value
/// (proportional hazards terminates in one iteration).  Damping halves the
/// step when the sup-norm residual grows.
pub fn fit_gamma(
    sample: &CensoredSample,
    model: &CoreModel,
    theta: &[f64],
    opts: FitGammaOpts,
) -> Result<Vec<f64>, EmpError> {
    fit_gamma_from(sample, model, theta, opts, None)
}

/// [`fit_gamma`] with an optional warm start.
pub fn fit_gamma_from(
    sample: &CensoredSample,
    model: &CoreModel,
    theta: &[f64],
    opts: FitGammaOpts,
    warm: Option<&[f64]>,
) -> Result<Vec<f64>, EmpError> {
    let profs = profiles(sample, model, theta)?;
    let m = sample.num_events();
    let n = sample.n() as f64;
    let d = model.dim_theta;

    let mut gamma: Vec<f64> = match warm {
        Some(w) if w.len() == m => w.to_vec(),
        _ => {
            // forward recursion with α at the left limit
            let mut g = Vec::with_capacity(m);
            let mut prev = 0.0;
            let mut scratch = vec![0.0; d];
            for k in 0..m {
                let mut s1 = 0.0;
                for i in sample.risk_start[k]..sample.n() {
                    let (alpha, _) =
                        model.eval_fast(&profs[i], prev, &sample.records[i].z, &mut scratch);
                    s1 += alpha;
                }
                s1 /= n;
                prev += sample.event_counts[k] / s1;
                g.push(prev);
            }
            g
        }
    };

    let mut damping = 1.0;
    let mut prev_residual = f64::INFINITY;
    for iter in 0..opts.max_iter {
        let s1 = s1_values_left(sample, model, &profs, &gamma);
        let mut next = Vec::with_capacity(m);
        let mut acc = 0.0;
        for k in 0..m {
            acc += sample.event_counts[k] / s1[k];
            next.push(acc);
        }
        let residual = gamma
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual <= opts.tol {
            return Ok(next);
        }
        if residual > prev_residual {
            damping = 0.5;
        }
        prev_residual = residual;
        if damping == 1.0 {
            gamma = next;
        } else {
            for k in 0..m {
                gamma[k] += damping * (next[k] - gamma[k]);
            }
        }
        if iter + 1 == opts.max_iter {
            return Err(EmpError::GammaNoConvergence {
                iterations: opts.max_iter,
                residual,
                tol: opts.tol,
            });
        }
    }
    unreachable!()
}

/// Solves the Volterra equation
/// `D[f](t) = −∫₀ᵗ ŝ[f] dC − ∫₀ᵗ D[f](u−) ŝ[ℓ′] dC`
/// by the forward recursion
/// `D_k = D_{k−1} − ŝ[f](t_k)ΔC_k − D_{k−1} ŝ[ℓ′](t_k)ΔC_k`.
///
/// `s_f` holds `ŝ[f]` values, `m × p` row-major; the result has the same
/// layout.
pub fn d_volterra(fx: &Functionals, s_f: &[f64], p: usize) -> Vec<f64> {
    let m = fx.m();
    assert_eq!(s_f.len(), m * p, "s_f layout mismatch");
    let mut out = vec![0.0; m * p];
    let mut prev = vec![0.0; p];
    for k in 0..m {
        let shrink = 1.0 - fx.s_lp[k] * fx.dc[k];
        for j in 0..p {
            let v = prev[j] * shrink - s_f[k * p + j] * fx.dc[k];
            out[k * p + j] = v;
            prev[j] = v;
        }
    }
    out
}

/// Explicit product-integral form of the same solution:
/// `D_k = −Σ_{j≤k} ŝ[f](t_j) ΔC_j Π_{j<i≤k}(1 − ŝ[ℓ′](t_i)ΔC_i)`.
///
/// The discrete product integral is the exact solution of the grid Volterra
/// recursion, so the two routes agree to roundoff; the exponential form of
/// `𝒫` differs at second order in the jumps.  O(m²); used as an oracle.
pub fn d_volterra_explicit(fx: &Functionals, s_f: &[f64], p: usize) -> Vec<f64> {
    let m = fx.m();
    assert_eq!(s_f.len(), m * p, "s_f layout mismatch");
    let mut out = vec![0.0; m * p];
    for k in 0..m {
        for j in 0..p {
            let mut acc = 0.0;
            for l in 0..=k {
                let mut prod = 1.0;
                for i in (l + 1)..=k {
                    prod *= 1.0 - fx.s_lp[i] * fx.dc[i];
                }
                acc -= s_f[l * p + j] * fx.dc[l] * prod;
            }
            out[k * p + j] = acc;
        }
    }
    out
}

/// `ŝ[f]` values for the stored `f` of a [`Functionals`], `m × df` flat.
pub fn s_f_values(fx: &Functionals) -> Vec<f64> {
    let mut out = Vec::with_capacity(fx.m() * fx.df);
    for k in 0..fx.m() {
        for j in 0..fx.df {
            out.push(fx.s_f(k, j));
        }
    }
    out
}

/// `ŝ[ℓ̇]` values, `m × d` flat.
pub fn s_ldot_values(fx: &Functionals) -> Vec<f64> {
    let mut out = Vec::with_capacity(fx.m() * fx.d);
    for k in 0..fx.m() {
        for j in 0..fx.d {
            out.push(fx.s_ldot(k, j));
        }
    }
    out
}
