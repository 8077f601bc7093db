//! Joint model solved by linearized ADMM.
//!
//! The self-expression is split as `C = Cp − Cq` with `Cp, Cq ≥ 0`, so the
//! problem
//!
//! ```text
//! min ½‖X − X[Cp − Cq]‖² + (η1/2)‖[Cp + Cq] − η2 A‖² + η3 Σ(Cp + Cq)
//! s.t. A doubly stochastic, Cp, Cq ≥ 0 with zero diagonal
//! ```
//!
//! is convex. ADMM runs on the copies `Y = A` (carrying the sum constraints)
//! and `Z = X[Cp − Cq]`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dsproj::{project, DenseCost, ProjectOptions, ProjectionMethod};
use crate::error::{DsscError, Result};
use crate::selfexpr::gram_spectral_norm;
use crate::sparse::CsrMatrix;
use crate::types::{CoeffMatrix, DataMatrix, DsscParams, StochasticAffinity};

/// Entries beyond this magnitude abort the solve.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Largest `n` accepted by default (the state is dense).
pub const DEFAULT_MAX_N: usize = 10_000;

#[derive(Debug, Clone)]
pub struct AdmmState {
    pub cp: DMatrix<f64>,
    pub cq: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// `d × n`.
    pub z: DMatrix<f64>,
    pub lambda1: DVector<f64>,
    pub lambda2: DVector<f64>,
    pub big_lambda1: DMatrix<f64>,
    /// `d × n`.
    pub big_lambda2: DMatrix<f64>,
    pub iter: usize,
    /// `X[Cp − Cq]` for the current `Cp`, `Cq`.
    xc: DMatrix<f64>,
}

impl AdmmState {
    /// `Cp = Cq = 0`, `A = Y = I`, `Z = 0`, zero multipliers.
    pub fn initial(d: usize, n: usize) -> Self {
        AdmmState {
            cp: DMatrix::zeros(n, n),
            cq: DMatrix::zeros(n, n),
            a: DMatrix::identity(n, n),
            y: DMatrix::identity(n, n),
            z: DMatrix::zeros(d, n),
            lambda1: DVector::zeros(n),
            lambda2: DVector::zeros(n),
            big_lambda1: DMatrix::zeros(n, n),
            big_lambda2: DMatrix::zeros(d, n),
            iter: 0,
            xc: DMatrix::zeros(d, n),
        }
    }

    /// A state from given primal blocks with zero multipliers.
    pub fn from_primal(x: &DataMatrix, cp: DMatrix<f64>, cq: DMatrix<f64>, a: DMatrix<f64>) -> Result<Self> {
        let (d, n) = x.values().shape();
        for (name, m) in [("Cp", &cp), ("Cq", &cq), ("A", &a)] {
            if m.shape() != (n, n) {
                return Err(DsscError::invalid(format!("{name} must be {n} x {n}, got {:?}", m.shape())));
            }
        }
        let xc = x.values() * (&cp - &cq);
        Ok(AdmmState {
            y: a.clone(),
            z: xc.clone(),
            cp,
            cq,
            a,
            lambda1: DVector::zeros(n),
            lambda2: DVector::zeros(n),
            big_lambda1: DMatrix::zeros(n, n),
            big_lambda2: DMatrix::zeros(d, n),
            iter: 0,
            xc,
        })
    }

    pub fn n(&self) -> usize {
        self.cp.nrows()
    }

    /// `X[Cp − Cq]` as last computed.
    pub fn xc(&self) -> &DMatrix<f64> {
        &self.xc
    }

    fn check_finite(&self) -> Result<()> {
        let blocks: [(&str, &DMatrix<f64>); 7] = [
            ("Cp", &self.cp),
            ("Cq", &self.cq),
            ("A", &self.a),
            ("Y", &self.y),
            ("Z", &self.z),
            ("Lambda1", &self.big_lambda1),
            ("Lambda2", &self.big_lambda2),
        ];
        let vecs: [(&str, &DVector<f64>); 2] = [("lambda1", &self.lambda1), ("lambda2", &self.lambda2)];
        let bad = |v: f64| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT;
        for (name, m) in blocks {
            if let Some(v) = m.iter().find(|&&v| bad(v)) {
                return Err(DsscError::Diverged {
                    iteration: self.iter,
                    what: format!("{name} has entry {v:e}"),
                });
            }
        }
        for (name, m) in vecs {
            if let Some(v) = m.iter().find(|&&v| bad(v)) {
                return Err(DsscError::Diverged {
                    iteration: self.iter,
                    what: format!("{name} has entry {v:e}"),
                });
            }
        }
        Ok(())
    }
}

/// `[E]_{+,d=0}` in place.
fn rectify_zero_diag(m: &mut DMatrix<f64>) {
    m.apply(|v| *v = v.max(0.0));
    m.fill_diagonal(0.0);
}

/// Gradient step on the coupling term followed by the proximal map, for `Cp`
/// (`sign = 1`) or `Cq` (`sign = −1`). `other` is the opposite block.
fn prox_block(
    x: &DMatrix<f64>,
    block: &DMatrix<f64>,
    other: &DMatrix<f64>,
    state: &AdmmState,
    params: &DsscParams,
    sign: f64,
) -> DMatrix<f64> {
    let (rho, tau) = (params.rho, params.tau);
    let (eta1, eta2, eta3) = (params.eta1, params.eta2, params.eta3);
    // −XᵀΛ2 + ρXᵀ(X[Cp − Cq] − Z), negated for Cq.
    let inner = (&state.xc - &state.z) * rho - &state.big_lambda2;
    let grad = x.tr_mul(&inner) * sign;
    let stepped = block - grad * tau;
    let scale = 1.0 / (eta1 + 1.0 / tau);
    let mut out = DMatrix::from_fn(stepped.nrows(), stepped.ncols(), |i, j| {
        scale * (stepped[(i, j)] / tau - eta1 * other[(i, j)] + eta1 * eta2 * state.a[(i, j)] - eta3)
    });
    rectify_zero_diag(&mut out);
    out
}

/// Linearized step on `Cp`.
pub fn update_cp(state: &mut AdmmState, x: &DataMatrix, params: &DsscParams) {
    let xv = x.values();
    state.cp = prox_block(xv, &state.cp, &state.cq, state, params, 1.0);
    state.xc = xv * (&state.cp - &state.cq);
}

/// Linearized step on `Cq`, using the latest `Cp`.
pub fn update_cq(state: &mut AdmmState, x: &DataMatrix, params: &DsscParams) {
    let xv = x.values();
    state.cq = prox_block(xv, &state.cq, &state.cp, state, params, -1.0);
    state.xc = xv * (&state.cp - &state.cq);
}

/// `A ← [(η1η2[Cp + Cq] + Λ1 + ρY) / (η1η2² + ρ)]_+`.
pub fn update_a(state: &mut AdmmState, params: &DsscParams) {
    let (e1, e2, rho) = (params.eta1, params.eta2, params.rho);
    let denom = e1 * e2 * e2 + rho;
    let n = state.n();
    state.a = DMatrix::from_fn(n, n, |i, j| {
        let v = e1 * e2 * (state.cp[(i, j)] + state.cq[(i, j)]) + state.big_lambda1[(i, j)] + rho * state.y[(i, j)];
        (v / denom).max(0.0)
    });
}

/// `V = ρA + 2ρ11ᵀ − 1λ1ᵀ − λ2 1ᵀ − Λ1`.
pub fn y_rhs(state: &AdmmState, rho: f64) -> DMatrix<f64> {
    let n = state.n();
    DMatrix::from_fn(n, n, |i, j| {
        rho * state.a[(i, j)] + 2.0 * rho - state.lambda1[j] - state.lambda2[i] - state.big_lambda1[(i, j)]
    })
}

/// Closed-form minimizer over `Y`:
/// `(1/ρ)[V − PV11ᵀ/(n+1) − 11ᵀVP/(n+1)]` with `P = I − 11ᵀ/(2n+1)`.
pub fn update_y(state: &mut AdmmState, params: &DsscParams) {
    let rho = params.rho;
    let n = state.n();
    let nf = n as f64;
    let v = y_rhs(state, rho);
    let row = v.column_sum();
    let col = v.row_sum();
    let row_total = row.sum();
    let col_total = col.sum();
    // P V 1 and 1ᵀ V P.
    let pv1: Vec<f64> = row.iter().map(|r| r - row_total / (2.0 * nf + 1.0)).collect();
    let vp: Vec<f64> = col.iter().map(|c| c - col_total / (2.0 * nf + 1.0)).collect();
    state.y = DMatrix::from_fn(n, n, |i, j| (v[(i, j)] - pv1[i] / (nf + 1.0) - vp[j] / (nf + 1.0)) / rho);
}

/// `Z ← (X − Λ2 + ρX[Cp − Cq]) / (1 + ρ)`.
pub fn update_z(state: &mut AdmmState, x: &DataMatrix, params: &DsscParams) {
    let rho = params.rho;
    state.z = (x.values() - &state.big_lambda2 + &state.xc * rho) / (1.0 + rho);
}

/// Dual ascent on all four multipliers.
pub fn ascend(state: &mut AdmmState, params: &DsscParams) {
    let rho = params.rho;
    let col = state.y.row_sum().transpose();
    let row = state.y.column_sum();
    state.lambda1 += (col.add_scalar(-1.0)) * rho;
    state.lambda2 += (row.add_scalar(-1.0)) * rho;
    state.big_lambda1 += (&state.y - &state.a) * rho;
    state.big_lambda2 += (&state.z - &state.xc) * rho;
}

/// One full iteration: `Cp`, `Cq`, `A`, `Y`, `Z`, then the multipliers.
pub fn admm_step(state: &mut AdmmState, x: &DataMatrix, params: &DsscParams) -> Result<()> {
    update_cp(state, x, params);
    update_cq(state, x, params);
    update_a(state, params);
    update_y(state, params);
    update_z(state, x, params);
    ascend(state, params);
    state.iter += 1;
    state.check_finite()
}

/// `½‖X − X[Cp − Cq]‖² + (η1/2)‖[Cp + Cq] − η2A‖² + η3 Σ(Cp + Cq)`.
pub fn objective_eq5(
    cp: &DMatrix<f64>,
    cq: &DMatrix<f64>,
    a: &DMatrix<f64>,
    x: &DataMatrix,
    params: &DsscParams,
) -> f64 {
    let xv = x.values();
    let fit = (xv - xv * (cp - cq)).norm_squared();
    let sum = cp + cq;
    let coupling = (&sum - a * params.eta2).norm_squared();
    0.5 * fit + 0.5 * params.eta1 * coupling + params.eta3 * sum.sum()
}

/// Splits a signed coefficient matrix into its positive and negative parts.
pub fn split_signed(c: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (c.map(|v| v.max(0.0)), c.map(|v| (-v).max(0.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residuals {
    /// `‖Y − A‖_F`.
    pub y_minus_a: f64,
    /// `‖Z − X[Cp − Cq]‖_F`.
    pub z_minus_xc: f64,
    /// `‖Y1 − 1‖`.
    pub row_sums: f64,
    /// `‖Yᵀ1 − 1‖`.
    pub col_sums: f64,
    /// Largest of `‖ΔCp‖/τ`, `‖ΔCq‖/τ`, `ρ‖ΔA‖`, `ρ‖ΔZ‖` over the last step.
    pub change: f64,
}

impl Residuals {
    pub fn primal(&self) -> f64 {
        self.y_minus_a.max(self.z_minus_xc).max(self.row_sums).max(self.col_sums)
    }

    pub fn max(&self) -> f64 {
        self.primal().max(self.change)
    }
}

fn primal_residuals(state: &AdmmState) -> Residuals {
    let row = state.y.column_sum().add_scalar(-1.0).norm();
    let col = state.y.row_sum().add_scalar(-1.0).norm();
    Residuals {
        y_minus_a: (&state.y - &state.a).norm(),
        z_minus_xc: (&state.z - &state.xc).norm(),
        row_sums: row,
        col_sums: col,
        change: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    /// Residual tolerance; `None` means `1e-5·√n`.
    pub tol: Option<f64>,
    pub max_iter: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            tol: None,
            max_iter: 20_000,
        }
    }
}

impl StopRule {
    pub fn tol_for(&self, n: usize) -> f64 {
        self.tol.unwrap_or(1e-5 * (n as f64).sqrt())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct JdsscOptions {
    pub stop: StopRule,
    /// Record a trace row every this many iterations (0 disables).
    pub trace_every: usize,
    pub max_n: usize,
    /// Tolerance used to validate the final projected affinity.
    pub feasibility_tol: f64,
}

impl Default for JdsscOptions {
    fn default() -> Self {
        JdsscOptions {
            stop: StopRule::default(),
            trace_every: 0,
            max_n: DEFAULT_MAX_N,
            feasibility_tol: crate::types::DEFAULT_FEASIBILITY_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    #[serde(flatten)]
    pub residuals: Residuals,
}

#[derive(Debug, Clone)]
pub struct JdsscResult {
    /// `Cp − Cq`.
    pub coeffs: CoeffMatrix,
    /// The ADMM affinity projected onto the doubly stochastic matrices.
    pub affinity: StochasticAffinity,
    pub state: AdmmState,
    pub iterations: usize,
    pub converged: bool,
    pub residuals: Residuals,
    /// Objective at the final ADMM iterate.
    pub objective: f64,
    /// The step size actually used.
    pub tau: f64,
    pub trace: Vec<TraceRow>,
}

impl JdsscResult {
    /// Turns a non-converged run into an error carrying its diagnostics.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(DsscError::NotConverged {
                solver: "linearized ADMM",
                iterations: self.iterations,
                residual: self.residuals.max(),
                detail: format!(
                    " (|Y-A| {:.2e}, |Z-XC| {:.2e}, rows {:.2e}, cols {:.2e}, change {:.2e})",
                    self.residuals.y_minus_a,
                    self.residuals.z_minus_xc,
                    self.residuals.row_sums,
                    self.residuals.col_sums,
                    self.residuals.change
                ),
            })
        }
    }
}

/// Largest step allowed by the linearization, `1/(ρ·λmax(XᵀX))`.
pub fn max_tau(x: &DataMatrix, rho: f64) -> f64 {
    1.0 / (rho * gram_spectral_norm(x).max(f64::MIN_POSITIVE))
}

/// Solves the joint model from the default initialization.
pub fn jdssc_solve(x: &DataMatrix, params: &DsscParams, stop: StopRule) -> Result<JdsscResult> {
    let opts = JdsscOptions { stop, ..JdsscOptions::default() };
    jdssc_solve_with(x, params, &opts, None)
}

/// Solves the joint model; `init` replaces the default starting state.
/// Running out of iterations is not an error here: the result carries
/// `converged = false` and the last residuals.
pub fn jdssc_solve_with(
    x: &DataMatrix,
    params: &DsscParams,
    opts: &JdsscOptions,
    init: Option<AdmmState>,
) -> Result<JdsscResult> {
    params.validate(None)?;
    let (d, n) = x.values().shape();
    if n > opts.max_n {
        return Err(DsscError::invalid(format!(
            "n = {n} exceeds the dense joint-model limit {}",
            opts.max_n
        )));
    }
    let mut params = *params;
    let limit = max_tau(x, params.rho);
    if params.tau > limit {
        let shrunk = 0.99 * limit;
        log::warn!(
            "tau = {} violates tau <= 1/(rho*lambda_max) = {limit:.3e}; using {shrunk:.3e}",
            params.tau
        );
        params.tau = shrunk;
    }
    let mut state = match init {
        Some(s) => {
            if s.n() != n || s.z.shape() != (d, n) {
                return Err(DsscError::invalid("initial state does not match the data shape"));
            }
            let mut s = s;
            s.xc = x.values() * (&s.cp - &s.cq);
            s
        }
        None => AdmmState::initial(d, n),
    };
    let tol = opts.stop.tol_for(n);
    let mut trace = Vec::new();
    let mut residuals = primal_residuals(&state);
    residuals.change = f64::INFINITY;
    let mut converged = false;
    for _ in 0..opts.stop.max_iter {
        let (cp0, cq0, a0, z0) = (state.cp.clone(), state.cq.clone(), state.a.clone(), state.z.clone());
        admm_step(&mut state, x, &params)?;
        residuals = primal_residuals(&state);
        residuals.change = ((&state.cp - cp0).norm() / params.tau)
            .max((&state.cq - cq0).norm() / params.tau)
            .max(params.rho * (&state.a - a0).norm())
            .max(params.rho * (&state.z - z0).norm());
        if opts.trace_every > 0 && state.iter % opts.trace_every == 0 {
            trace.push(TraceRow {
                iter: state.iter,
                objective: objective_eq5(&state.cp, &state.cq, &state.a, x, &params),
                residuals,
            });
        }
        if residuals.max() <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "linearized ADMM stopped after {} iterations with residual {:.3e} (tol {tol:.3e})",
            state.iter,
            residuals.max()
        );
    }
    let objective = objective_eq5(&state.cp, &state.cq, &state.a, x, &params);
    let coeffs = CoeffMatrix::from_dense(&(&state.cp - &state.cq), true)?;
    let affinity = project_affinity(&state.a, opts.feasibility_tol)?;
    Ok(JdsscResult {
        coeffs,
        affinity,
        iterations: state.iter,
        state,
        converged,
        residuals,
        objective,
        tau: params.tau,
        trace,
    })
}

/// Euclidean projection of a nonnegative matrix onto the doubly stochastic
/// matrices, so the returned affinity is exactly feasible.
pub fn project_affinity(a: &DMatrix<f64>, feasibility_tol: f64) -> Result<StochasticAffinity> {
    let mut opts = ProjectOptions {
        method: ProjectionMethod::Dual,
        ..ProjectOptions::default()
    };
    opts.active_set.feasibility_tol = feasibility_tol;
    // argmin ½‖B − A‖² = argmin −⟨A, B⟩ + ½‖B‖² over the polytope.
    let cost = DenseCost::new(a.map(|v| v.max(0.0)))?;
    Ok(project(&cost, 1.0, &opts)?.affinity)
}

/// Minimizes over `Cp`, `Cq` with `A` held fixed, by the same linearized
/// ADMM restricted to the `Z` splitting.
pub fn solve_coeffs_fixed_affinity(
    x: &DataMatrix,
    params: &DsscParams,
    a: &DMatrix<f64>,
    stop: StopRule,
) -> Result<(DMatrix<f64>, DMatrix<f64>, bool)> {
    params.validate(None)?;
    let (d, n) = x.values().shape();
    if a.shape() != (n, n) {
        return Err(DsscError::invalid("affinity shape does not match the data"));
    }
    let mut params = *params;
    params.tau = params.tau.min(0.99 * max_tau(x, params.rho));
    let mut state = AdmmState::initial(d, n);
    state.a = a.clone();
    let tol = stop.tol_for(n);
    for _ in 0..stop.max_iter {
        let (cp0, cq0, z0) = (state.cp.clone(), state.cq.clone(), state.z.clone());
        update_cp(&mut state, x, &params);
        update_cq(&mut state, x, &params);
        update_z(&mut state, x, &params);
        state.big_lambda2 += (&state.z - &state.xc) * params.rho;
        state.iter += 1;
        state.check_finite()?;
        let change = ((&state.cp - cp0).norm() / params.tau)
            .max((&state.cq - cq0).norm() / params.tau)
            .max(params.rho * (&state.z - z0).norm());
        if change.max((&state.z - &state.xc).norm()) <= tol {
            return Ok((state.cp, state.cq, true));
        }
    }
    Ok((state.cp, state.cq, false))
}

/// Entries counted as nonzero when comparing supports.
pub const SUPPORT_THRESHOLD: f64 = 1e-6;

/// Positions where both `Cp` and `Cq` exceed `threshold`.
pub fn support_overlap(cp: &DMatrix<f64>, cq: &DMatrix<f64>, threshold: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for j in 0..cp.ncols() {
        for i in 0..cp.nrows() {
            if cp[(i, j)] > threshold && cq[(i, j)] > threshold {
                out.push((i, j));
            }
        }
    }
    out
}

/// Upper bound on overlapping entries when `η1η2 > η3`.
pub fn overlap_bound(params: &DsscParams) -> f64 {
    (params.eta1 * params.eta2 - params.eta3) / params.eta1
}

/// Joint-model objective of a signed coefficient matrix and a sparse
/// affinity, with `Cp`, `Cq` its positive and negative parts.
pub fn objective_of_split(c: &DMatrix<f64>, a: &CsrMatrix, x: &DataMatrix, params: &DsscParams) -> f64 {
    let (cp, cq) = split_signed(c);
    objective_eq5(&cp, &cq, &a.to_dense(), x, params)
}
