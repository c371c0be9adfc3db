//! Fredholm solver for the reduced equation on the event grid.
//!
//! Rescaling the second-kind equation by `𝒫(0,t)^{-1}` turns the kernel
//! `K(t,u) = 𝒫(0,t)𝒫(0,u)c(t∧u)` into `k(t,u) = c(t∧u)` with the measures
//! `Δc(t_k) = 𝒫(0,t_k)^{-2} ΔC(t_k)` and `Δb(t_k) = 𝒫(0,t_k)² ΔB(t_k)`.
//! The resolvent at `λ = −1` is
//! `Δ̃(u,t) = Ψ₁(0,u∧t) Ψ₀(u∨t,τ₀) / Ψ₀(0,τ₀)`,
//! with the interval functions `Ψ₀`, `Ψ₁` computed by O(m) prefix/suffix
//! recursions.  Dense LU and tridiagonal assemblies are kept as oracles.

use crate::empirical::{d_volterra, s_f_values, Functionals};
use crate::step::StepFunction;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FredholmError {
    #[error("log P0 magnitude {0:.1} exceeds the overflow guard 300; kappa blow-up")]
    LogP0Overflow(f64),
    #[error("Fredholm residual {residual:.3e} exceeds tolerance {tol:.3e} after dense retry")]
    Residual { residual: f64, tol: f64 },
    #[error("dense system is singular")]
    Singular,
    #[error("grid size {0} exceeds the dense-oracle guard 2000")]
    GridTooLarge(usize),
}

/// Sup-norm tolerance on the Fredholm residual of the solved equation.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// The rescaled system: measures `c`, `b`, the Ψ accumulators and `κ(τ₀)`.
#[derive(Debug, Clone)]
pub struct FredholmSystem {
    pub grid: Arc<Vec<f64>>,
    /// Jumps `Δc(t_k)`.
    pub dc: Vec<f64>,
    /// Jumps `Δb(t_k)`.
    pub db: Vec<f64>,
    /// Cumulative `c(t_k)`.
    pub c: Vec<f64>,
    /// Cumulative `b(t_k)`.
    pub b: Vec<f64>,
    /// `Ψ₁(0, t_k]` (atom at `t_k` included).
    pub psi1_from0: Vec<f64>,
    /// `Ψ₀(0, t_k]`, forward companion of `psi1_from0`.
    pub psi0_from0: Vec<f64>,
    /// `Ψ₀(t_k, τ₀]` (atom at `t_k` excluded).
    pub psi0_to_end: Vec<f64>,
    /// `Ψ₀(0, τ₀]` from the backward recursion.
    pub psi0_total: f64,
    /// `κ(τ₀) = ∫₀^{τ₀} c(u) b(du)`.
    pub kappa: f64,
    /// `log 𝒫(0, t_k)` carried over for un-scaling.
    pub log_p0: Vec<f64>,
}

impl FredholmSystem {
    /// Builds a system directly from jump measures (`log_p0 ≡ 0`); the main
    /// entry point for synthetic and property tests.
    pub fn from_measures(grid: Arc<Vec<f64>>, dc: Vec<f64>, db: Vec<f64>) -> Self {
        let m = grid.len();
        assert_eq!(dc.len(), m);
        assert_eq!(db.len(), m);
        let log_p0 = vec![0.0; m];
        Self::assemble(grid, dc, db, log_p0)
    }

    fn assemble(grid: Arc<Vec<f64>>, dc: Vec<f64>, db: Vec<f64>, log_p0: Vec<f64>) -> Self {
        let m = grid.len();
        let mut c = Vec::with_capacity(m);
        let mut b = Vec::with_capacity(m);
        let mut kappa = 0.0;
        let (mut ca, mut ba) = (0.0, 0.0);
        for k in 0..m {
            ca += dc[k];
            ba += db[k];
            c.push(ca);
            b.push(ba);
            kappa += ca * db[k];
        }
        // forward: Ψ₁ picks up the atom at the left limit of Ψ₀, then Ψ₀
        // advances with the updated Ψ₁
        let mut psi1_from0 = Vec::with_capacity(m);
        let mut psi0_from0 = Vec::with_capacity(m);
        let (mut p0, mut p1) = (1.0, 0.0);
        for k in 0..m {
            p1 += dc[k] * p0;
            p0 += p1 * db[k];
            psi1_from0.push(p1);
            psi0_from0.push(p0);
        }
        // backward suffix recursion for Ψ₀(t_k, τ₀]
        let mut psi0_to_end = vec![1.0; m];
        let mut g = db[m - 1];
        for s in (0..m.saturating_sub(1)).rev() {
            psi0_to_end[s] = psi0_to_end[s + 1] + dc[s + 1] * g;
            g += db[s] * psi0_to_end[s];
        }
        let psi0_total = psi0_to_end[0] + dc[0] * g;
        Self {
            grid,
            dc,
            db,
            c,
            b,
            psi1_from0,
            psi0_from0,
            psi0_to_end,
            psi0_total,
            kappa,
            log_p0,
        }
    }

    pub fn m(&self) -> usize {
        self.grid.len()
    }

    /// Cumulative `κ(t_k)`.
    pub fn kappa_curve(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.m());
        let mut acc = 0.0;
        for k in 0..self.m() {
            acc += self.c[k] * self.db[k];
            out.push(acc);
        }
        out
    }
}

/// Builds the rescaled system from sample functionals.
pub fn build_system(fx: &Functionals) -> Result<FredholmSystem, FredholmError> {
    let m = fx.m();
    let mut dc = Vec::with_capacity(m);
    let mut db = Vec::with_capacity(m);
    for k in 0..m {
        let lp = fx.log_p0[k];
        if lp.abs() > 300.0 {
            return Err(FredholmError::LogP0Overflow(lp.abs()));
        }
        dc.push((-2.0 * lp).exp() * fx.dc[k]);
        db.push((2.0 * lp).exp() * fx.db[k]);
    }
    Ok(FredholmSystem::assemble(
        fx.grid.clone(),
        dc,
        db,
        fx.log_p0.clone(),
    ))
}

/// `Δ̃(t_s, t_t) = Ψ₁(0, t_{s∧t}) Ψ₀(t_{s∨t}, τ₀) / Ψ₀(0, τ₀)`; symmetric.
pub fn resolvent(system: &FredholmSystem, s: usize, t: usize) -> f64 {
    let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
    system.psi1_from0[lo] * system.psi0_to_end[hi] / system.psi0_total
}

/// Solution of the rescaled equation for the direction `f` stored in the
/// functionals, transported back to the original scale.
#[derive(Debug, Clone)]
pub struct PhiSolution {
    /// `φ` per component of `f`.
    pub phi: Vec<StepFunction>,
    /// `D[f]` per component.
    pub d_f: Vec<StepFunction>,
    /// `ρ̃[f,−D[f]](t) = 𝒫(0,t) (cov[f,ℓ′](t) + var[ℓ′](t) D[f](t))`.
    pub rho_tilde: Vec<StepFunction>,
    /// Sup-norm residual of the unscaled second-kind equation.
    pub residual: f64,
}

impl PhiSolution {
    /// `φ_j(t_k)` without going through a time lookup.
    pub fn phi_at(&self, k: usize, j: usize) -> f64 {
        self.phi[j].values()[k]
    }
}

/// `Σ_u k(t_k, u) x_u` for every `k` in O(m), splitting at the diagonal:
/// `Σ_{u≤k} c(u) x_u + c(t_k) Σ_{u>k} x_u`.
fn kernel_apply(c: &[f64], x: &[f64]) -> Vec<f64> {
    let m = c.len();
    let mut suffix = vec![0.0; m + 1];
    for k in (0..m).rev() {
        suffix[k] = suffix[k + 1] + x[k];
    }
    let mut out = Vec::with_capacity(m);
    let mut prefix = 0.0;
    for k in 0..m {
        prefix += c[k] * x[k];
        out.push(prefix + c[k] * suffix[k + 1]);
    }
    out
}

/// Solves `φ = −D[f] + ∫ Δ̃(t,u) ρ[f,−D[f]](u) N.(du) 𝒫(0,u) 𝒫(0,t)`
/// componentwise via the Ψ resolvent, verifies the residual of the original
/// equation, and falls back to the dense assembly if needed.
pub fn solve_phi(system: &FredholmSystem, fx: &Functionals) -> Result<PhiSolution, FredholmError> {
    let m = fx.m();
    let df = fx.df;
    let sf = s_f_values(fx);
    let d_f = d_volterra(fx, &sf, df);

    let p0: Vec<f64> = fx.log_p0.iter().map(|l| l.exp()).collect();
    // ρ̃(u) = 𝒫(0,u) (cov[f,ℓ′](u) + var[ℓ′](u) D[f](u))
    let mut rho_tilde = vec![0.0; m * df];
    for k in 0..m {
        for j in 0..df {
            rho_tilde[k * df + j] =
                p0[k] * (fx.cov_f_lp[k * df + j] + fx.var_lp[k] * d_f[k * df + j]);
        }
    }

    let mut phi = vec![0.0; m * df];
    for j in 0..df {
        let w: Vec<f64> = (0..m).map(|k| rho_tilde[k * df + j] * fx.dn[k]).collect();
        let mut suffix = vec![0.0; m + 1];
        for k in (0..m).rev() {
            suffix[k] = suffix[k + 1] + system.psi0_to_end[k] * w[k];
        }
        let mut prefix = 0.0;
        for k in 0..m {
            prefix += system.psi1_from0[k] * w[k];
            let psi = p0[k]
                * (system.psi0_to_end[k] * prefix + system.psi1_from0[k] * suffix[k + 1])
                / system.psi0_total;
            phi[k * df + j] = -d_f[k * df + j] + psi;
        }
    }

    let mut residual = residual_sup(system, fx, &d_f, &phi, &p0);
    if residual > RESIDUAL_TOL {
        // dense retry of the rescaled equation
        for j in 0..df {
            let w: Vec<f64> = (0..m).map(|k| rho_tilde[k * df + j] * fx.dn[k]).collect();
            let rhs = kernel_apply(&system.c, &w);
            let psi_scaled = solve_dense_oracle(system, &rhs)?;
            for k in 0..m {
                phi[k * df + j] = -d_f[k * df + j] + p0[k] * psi_scaled[k];
            }
        }
        residual = residual_sup(system, fx, &d_f, &phi, &p0);
        if residual > RESIDUAL_TOL {
            return Err(FredholmError::Residual {
                residual,
                tol: RESIDUAL_TOL,
            });
        }
    }

    let column = |flat: &[f64], j: usize| -> StepFunction {
        let vals: Vec<f64> = (0..m).map(|k| flat[k * df + j]).collect();
        StepFunction::new(fx.grid.clone(), vals, 0.0).expect("grid length")
    };
    Ok(PhiSolution {
        phi: (0..df).map(|j| column(&phi, j)).collect(),
        d_f: (0..df).map(|j| column(&d_f, j)).collect(),
        rho_tilde: (0..df).map(|j| column(&rho_tilde, j)).collect(),
        residual,
    })
}

/// Sup-norm defect of `φ(t) = −D[f](t) + Σ_u K(t,u) ρ[f,φ](u) ΔN(u)` with
/// `ρ[f,φ](u) = cov[f,ℓ′](u) − var[ℓ′](u) φ(u)` and
/// `K(t,u) = 𝒫(0,t) 𝒫(0,u) c(t∧u)`.
fn residual_sup(
    system: &FredholmSystem,
    fx: &Functionals,
    d_f: &[f64],
    phi: &[f64],
    p0: &[f64],
) -> f64 {
    let m = fx.m();
    let df = fx.df;
    let mut sup: f64 = 0.0;
    for j in 0..df {
        let x: Vec<f64> = (0..m)
            .map(|k| {
                p0[k]
                    * (fx.cov_f_lp[k * df + j] - fx.var_lp[k] * phi[k * df + j])
                    * fx.dn[k]
            })
            .collect();
        let applied = kernel_apply(&system.c, &x);
        for k in 0..m {
            let defect = phi[k * df + j] + d_f[k * df + j] - p0[k] * applied[k];
            sup = sup.max(defect.abs());
        }
    }
    sup
}

/// Dense reference solve of `ψ(t) + Σ_u k(t,u) Δb(u) ψ(u) = rhs(t)` with
/// `k(t,u) = c(t∧u)`, by LU on the assembled m×m matrix.
pub fn solve_dense_oracle(system: &FredholmSystem, rhs: &[f64]) -> Result<Vec<f64>, FredholmError> {
    let m = system.m();
    if m > 2000 {
        return Err(FredholmError::GridTooLarge(m));
    }
    assert_eq!(rhs.len(), m);
    let a = DMatrix::from_fn(m, m, |i, j| {
        let kij = system.c[i.min(j)];
        if i == j {
            1.0 + kij * system.db[j]
        } else {
            kij * system.db[j]
        }
    });
    let lu = a.lu();
    lu.solve(&DVector::from_column_slice(rhs))
        .map(|v| v.as_slice().to_vec())
        .ok_or(FredholmError::Singular)
}

/// The full dense resolvent matrix `Δ̃`, solving `(I + k·diag(Δb)) X = k`.
pub fn dense_resolvent(system: &FredholmSystem) -> Result<DMatrix<f64>, FredholmError> {
    let m = system.m();
    if m > 2000 {
        return Err(FredholmError::GridTooLarge(m));
    }
    let a = DMatrix::from_fn(m, m, |i, j| {
        let kij = system.c[i.min(j)];
        if i == j {
            1.0 + kij * system.db[j]
        } else {
            kij * system.db[j]
        }
    });
    let k = DMatrix::from_fn(m, m, |i, j| system.c[i.min(j)]);
    a.lu().solve(&k).ok_or(FredholmError::Singular)
}

/// Tridiagonal route for the same dense system, obtained by
/// second-differencing the `c(t∧u)` kernel and solved with the Thomas
/// algorithm.
pub fn solve_tridiagonal_oracle(system: &FredholmSystem, rhs: &[f64]) -> Vec<f64> {
    let m = system.m();
    assert_eq!(rhs.len(), m);
    let dc = &system.dc;
    let db = &system.db;
    if m == 1 {
        return vec![rhs[0] / (1.0 + system.c[0] * db[0])];
    }
    // rho[i] = (rhs_{i+1} − rhs_i) / Δc_{i+1}
    let rho: Vec<f64> = (0..m - 1).map(|i| (rhs[i + 1] - rhs[i]) / dc[i + 1]).collect();
    let mut sub = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut sup = vec![0.0; m];
    let mut r = vec![0.0; m];
    diag[0] = 1.0 + dc[0] * db[0] + dc[0] / dc[1];
    sup[0] = -dc[0] / dc[1];
    r[0] = rhs[0] - dc[0] * rho[0];
    for i in 1..m - 1 {
        sub[i] = 1.0 / dc[i];
        diag[i] = -(1.0 / dc[i] + 1.0 / dc[i + 1] + db[i]);
        sup[i] = 1.0 / dc[i + 1];
        r[i] = rho[i] - rho[i - 1];
    }
    sub[m - 1] = -1.0 / dc[m - 1];
    diag[m - 1] = 1.0 / dc[m - 1] + db[m - 1];
    r[m - 1] = rho[m - 2];

    // Thomas sweep
    let mut cp = vec![0.0; m];
    let mut dp = vec![0.0; m];
    cp[0] = sup[0] / diag[0];
    dp[0] = r[0] / diag[0];
    for i in 1..m {
        let denom = diag[i] - sub[i] * cp[i - 1];
        cp[i] = if i < m - 1 { sup[i] / denom } else { 0.0 };
        dp[i] = (r[i] - sub[i] * dp[i - 1]) / denom;
    }
    let mut x = vec![0.0; m];
    x[m - 1] = dp[m - 1];
    for i in (0..m - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

/// Dense Ψ tables over every atom pair; reference implementation for the
/// cross-identity and resolvent property tests (O(m²) memory).
///
/// Index `0` stands for the time origin, index `k ≥ 1` for the k-th atom.
/// `psi0[s][t]`, `psi1[s][t]` are over `(t_s, t_t]`; `psi2[s][t]`,
/// `psi3[s][t]` over `[t_s, t_t)`; the `p`-variants close the right end,
/// `[t_s, t_t]`.
#[derive(Debug)]
pub struct PsiTables {
    pub psi0: Vec<Vec<f64>>,
    pub psi1: Vec<Vec<f64>>,
    pub psi2: Vec<Vec<f64>>,
    pub psi3: Vec<Vec<f64>>,
    pub psi2p: Vec<Vec<f64>>,
    pub psi3p: Vec<Vec<f64>>,
}

pub fn dense_psi_tables(dc: &[f64], db: &[f64]) -> PsiTables {
    let m = dc.len();
    let size = m + 1;
    let mut psi0 = vec![vec![1.0; size]; size];
    let mut psi1 = vec![vec![0.0; size]; size];
    let mut psi2 = vec![vec![1.0; size]; size];
    let mut psi3 = vec![vec![0.0; size]; size];
    let mut psi2p = vec![vec![1.0; size]; size];
    let mut psi3p = vec![vec![0.0; size]; size];
    for s in 0..size {
        // Ψ₀/Ψ₁ over (t_s, t_j], adding atom j at each step
        let (mut p0, mut p1) = (1.0, 0.0);
        for j in s + 1..size {
            p1 += dc[j - 1] * p0;
            p0 += p1 * db[j - 1];
            psi0[s][j] = p0;
            psi1[s][j] = p1;
        }
        // Ψ₂/Ψ₃ over [t_s, t_j): adding atom j updates Ψ₂ first from the old
        // values, then Ψ₃ from the new Ψ₂. Closing the right end ([t_s, t_j])
        // is the same step, so the closed tables at j equal the open ones at
        // j+1.
        let start = s.max(1);
        let (mut p2, mut p3) = (1.0, 0.0);
        for j in start..size {
            psi2[s][j] = p2;
            psi3[s][j] = p3;
            let c2 = p2 + p3 * dc[j - 1];
            let c3 = p3 + c2 * db[j - 1];
            psi2p[s][j] = c2;
            psi3p[s][j] = c3;
            p2 = c2;
            p3 = c3;
        }
    }
    PsiTables {
        psi0,
        psi1,
        psi2,
        psi3,
        psi2p,
        psi3p,
    }
}
