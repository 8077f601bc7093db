//! Self-expressive coefficients: ridge (LSR) closed forms, entrywise
//! evaluation through a `d × d` Woodbury factor, and an elastic-net solver.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{DsscError, Result};
use crate::sparse::CsrMatrix;
use crate::types::{CoeffMatrix, DataMatrix, SupportPattern};

/// Largest `n` for which [`lsr_dense`] will materialize an `n × n` matrix.
pub const DEFAULT_DENSE_CAP: usize = 8000;

/// Precomputed `d × d` factors for ridge self-expression with weight `gamma`.
///
/// With `G = XXᵀ`, `m = (1/γ)I − (1/γ²)(I + G/γ)⁻¹G` so that the ridge
/// coefficients are `C_ij = x_iᵀ m x_j`, and `zcore = (γI + G)⁻¹`.
#[derive(Debug, Clone)]
pub struct WoodburyCache {
    gamma: f64,
    m: DMatrix<f64>,
    zcore: DMatrix<f64>,
}

impl WoodburyCache {
    pub fn new(x: &DataMatrix, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let xv = x.values();
        let d = x.dim();
        let gram = xv * xv.transpose();

        let inner = DMatrix::<f64>::identity(d, d) + &gram / gamma;
        let chol = inner
            .cholesky()
            .ok_or_else(|| DsscError::invalid("I + XXᵀ/γ is not positive definite"))?;
        let solved = chol.solve(&gram);
        let m = DMatrix::<f64>::identity(d, d) / gamma - solved / (gamma * gamma);

        let shifted = DMatrix::<f64>::identity(d, d) * gamma + &gram;
        let zcore = shifted
            .cholesky()
            .ok_or_else(|| DsscError::invalid("γI + XXᵀ is not positive definite"))?
            .inverse();
        Ok(WoodburyCache { gamma, m, zcore })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn zcore(&self) -> &DMatrix<f64> {
        &self.zcore
    }

    /// `x_iᵀ M x_j` for a single pair.
    pub fn entry(&self, x: &DataMatrix, i: usize, j: usize) -> f64 {
        let xv = x.values();
        let mx = &self.m * xv.column(j);
        xv.column(i).dot(&mx)
    }

    /// Row `i` of the ridge coefficients, `Xᵀ M x_i` (`M` is symmetric).
    pub fn row_into(&self, x: &DataMatrix, i: usize, out: &mut [f64]) {
        let xv = x.values();
        let w = &self.m * xv.column(i);
        for (j, o) in out.iter_mut().enumerate() {
            *o = xv.column(j).dot(&w);
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(DsscError::invalid(format!("ridge weight must be > 0, got {gamma}")))
    }
}

/// Ridge coefficients on the support `s` only, in `O(nnz(s))` memory.
pub fn lsr_entries(cache: &WoodburyCache, x: &DataMatrix, s: &SupportPattern) -> Result<CsrMatrix> {
    let n = x.n_points();
    if s.n() != n {
        return Err(DsscError::invalid(format!(
            "support is {} x {0}, data has {n} points",
            s.n()
        )));
    }
    let xv = x.values();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let w = &cache.m * xv.column(i);
            s.row(i).iter().map(|&j| xv.column(j).dot(&w)).collect()
        })
        .collect();
    let mut indptr = Vec::with_capacity(n + 1);
    indptr.push(0);
    let mut indices = Vec::with_capacity(s.nnz());
    let mut values = Vec::with_capacity(s.nnz());
    for (i, r) in rows.into_iter().enumerate() {
        indices.extend_from_slice(s.row(i));
        values.extend(r);
        indptr.push(indices.len());
    }
    CsrMatrix::from_parts(n, n, indptr, indices, values)
}

/// Dense ridge coefficients `(XᵀX + γI)⁻¹XᵀX`, optionally with the diagonal
/// constrained to zero.
pub fn lsr_dense(x: &DataMatrix, gamma: f64, zero_diag: bool) -> Result<CoeffMatrix> {
    let c = lsr_dense_matrix(x, gamma, zero_diag, DEFAULT_DENSE_CAP)?;
    CoeffMatrix::from_dense(&c, zero_diag)
}

/// As [`lsr_dense`] but returns the dense matrix and takes an explicit size cap.
///
/// With `zero_diag`, column `j` minimizes `½‖x_j − Xc‖² + (γ/2)‖c‖²` subject
/// to `c_j = 0`; the equality constraint's multiplier gives
/// `C = C0 − Z·diag(μ)` with `Z = (XᵀX + γI)⁻¹ = (I − C0)/γ` and
/// `μ_j = (C0)_jj / Z_jj`.
pub fn lsr_dense_matrix(x: &DataMatrix, gamma: f64, zero_diag: bool, cap: usize) -> Result<DMatrix<f64>> {
    check_gamma(gamma)?;
    let n = x.n_points();
    if n > cap {
        return Err(DsscError::invalid(format!(
            "n = {n} exceeds the dense cap of {cap}; use the Woodbury entrywise path"
        )));
    }
    let xv = x.values();
    let mut c0 = if x.dim() < n {
        let cache = WoodburyCache::new(x, gamma)?;
        let mx = cache.m() * xv;
        xv.transpose() * mx
    } else {
        let g = xv.transpose() * xv;
        let shifted = &g + DMatrix::<f64>::identity(n, n) * gamma;
        shifted
            .cholesky()
            .ok_or_else(|| DsscError::invalid("XᵀX + γI is not positive definite"))?
            .solve(&g)
    };
    if zero_diag {
        let mu: Vec<f64> = (0..n)
            .map(|j| {
                let zjj = (1.0 - c0[(j, j)]) / gamma;
                c0[(j, j)] / zjj
            })
            .collect();
        let base = c0.clone();
        for j in 0..n {
            for i in 0..n {
                let z = if i == j { (1.0 - base[(i, j)]) / gamma } else { -base[(i, j)] / gamma };
                c0[(i, j)] = base[(i, j)] - z * mu[j];
            }
            c0[(j, j)] = 0.0;
        }
    }
    Ok(c0)
}

/// Stopping settings for [`ensc_solve`].
#[derive(Debug, Clone, Copy)]
pub struct EnscOptions {
    pub kkt_tol: f64,
    pub max_iter: usize,
    pub record_trace: bool,
}

impl Default for EnscOptions {
    fn default() -> Self {
        EnscOptions {
            kkt_tol: 1e-6,
            max_iter: 10_000,
            record_trace: false,
        }
    }
}

/// One column of the elastic-net problem.
#[derive(Debug, Clone)]
pub struct EnscColumn {
    pub coeffs: Vec<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub objective: f64,
    /// Objective after every iteration, when requested.
    pub trace: Vec<f64>,
}

/// Largest eigenvalue of `XᵀX` (computed on the smaller Gram matrix).
pub fn gram_spectral_norm(x: &DataMatrix) -> f64 {
    let xv = x.values();
    let gram = if x.dim() <= x.n_points() {
        xv * xv.transpose()
    } else {
        xv.transpose() * xv
    };
    gram.symmetric_eigenvalues().max().max(0.0)
}

/// `½‖x_j − Xc‖² + (η1/2)‖c‖² + η3‖c‖₁`.
pub fn ensc_column_objective(x: &DataMatrix, j: usize, c: &[f64], eta1: f64, eta3: f64) -> f64 {
    let xv = x.values();
    let r = xv * DVector::from_column_slice(c) - xv.column(j);
    let sq: f64 = c.iter().map(|v| v * v).sum();
    let l1: f64 = c.iter().map(|v| v.abs()).sum();
    0.5 * r.norm_squared() + 0.5 * eta1 * sq + eta3 * l1
}

/// Largest violation of the soft-threshold optimality conditions at `c`.
pub fn ensc_kkt_residual(x: &DataMatrix, j: usize, c: &[f64], eta1: f64, eta3: f64) -> f64 {
    let g = smooth_grad(x.values(), j, c, eta1);
    kkt_from_grad(&g, c, j, eta3)
}

fn smooth_grad(xv: &DMatrix<f64>, j: usize, c: &[f64], eta1: f64) -> Vec<f64> {
    let d = xv.nrows();
    let mut r = -xv.column(j).into_owned();
    for (i, &ci) in c.iter().enumerate() {
        if ci != 0.0 {
            r.axpy(ci, &xv.column(i), 1.0);
        }
    }
    debug_assert_eq!(r.len(), d);
    (0..c.len())
        .map(|i| xv.column(i).dot(&r) + eta1 * c[i])
        .collect()
}

fn kkt_from_grad(g: &[f64], c: &[f64], j: usize, eta3: f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..c.len() {
        if i == j {
            continue;
        }
        let v = if c[i] > 0.0 {
            (g[i] + eta3).abs()
        } else if c[i] < 0.0 {
            (g[i] - eta3).abs()
        } else {
            (g[i].abs() - eta3).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// `f(new) − f(old)` for column `j`, formed from differences so it stays
/// accurate when the two objectives agree to machine precision.
fn objective_change(xv: &DMatrix<f64>, j: usize, old: &[f64], new: &[f64], eta1: f64, eta3: f64) -> f64 {
    let mut dr = DVector::zeros(xv.nrows());
    let mut r_old = -xv.column(j).into_owned();
    let mut ridge = 0.0;
    let mut l1 = 0.0;
    for (i, (&o, &v)) in old.iter().zip(new).enumerate() {
        let d = v - o;
        if d != 0.0 {
            dr.axpy(d, &xv.column(i), 1.0);
        }
        if o != 0.0 {
            r_old.axpy(o, &xv.column(i), 1.0);
        }
        ridge += d * (v + o);
        l1 += v.abs() - o.abs();
    }
    0.5 * dr.norm_squared() + dr.dot(&r_old) + 0.5 * eta1 * ridge + eta3 * l1
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Solves one column by accelerated proximal gradient with step `1/L`,
/// restarting the momentum whenever the objective would increase (so the
/// accepted iterates are monotone up to roundoff).
pub fn ensc_column(
    x: &DataMatrix,
    j: usize,
    eta1: f64,
    eta3: f64,
    lipschitz: f64,
    opts: &EnscOptions,
) -> EnscColumn {
    let n = x.n_points();
    let xv = x.values();
    let step = 1.0 / lipschitz;
    let mut cur = vec![0.0; n];
    let mut f_cur = ensc_column_objective(x, j, &cur, eta1, eta3);
    let mut y = cur.clone();
    let mut t = 1.0f64;
    let mut trace = Vec::new();
    let mut kkt = ensc_kkt_residual(x, j, &cur, eta1, eta3);
    let mut iterations = 0;

    while kkt > opts.kkt_tol && iterations < opts.max_iter {
        iterations += 1;
        let g = smooth_grad(xv, j, &y, eta1);
        let z: Vec<f64> = (0..n)
            .map(|i| if i == j { 0.0 } else { soft_threshold(y[i] - step * g[i], step * eta3) })
            .collect();
        let delta = objective_change(xv, j, &cur, &z, eta1, eta3);
        if delta <= 0.0 {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            y = z.iter().zip(&cur).map(|(zi, ci)| zi + beta * (zi - ci)).collect();
            cur = z;
            f_cur += delta;
            t = t_next;
        } else {
            y = cur.clone();
            t = 1.0;
        }
        if opts.record_trace {
            trace.push(f_cur);
        }
        kkt = ensc_kkt_residual(x, j, &cur, eta1, eta3);
    }
    EnscColumn {
        objective: ensc_column_objective(x, j, &cur, eta1, eta3),
        coeffs: cur,
        iterations,
        kkt_residual: kkt,
        trace,
    }
}

/// Elastic-net self-expression with zero diagonal, column by column.
/// `eta3 = 0` reduces to the ridge closed form.
pub fn ensc_solve(x: &DataMatrix, eta1: f64, eta3: f64) -> Result<CoeffMatrix> {
    ensc_solve_with(x, eta1, eta3, &EnscOptions::default())
}

pub fn ensc_solve_with(x: &DataMatrix, eta1: f64, eta3: f64, opts: &EnscOptions) -> Result<CoeffMatrix> {
    check_gamma(eta1)?;
    if !(eta3 >= 0.0 && eta3.is_finite()) {
        return Err(DsscError::invalid(format!("eta3 must be >= 0, got {eta3}")));
    }
    if eta3 == 0.0 {
        return lsr_dense(x, eta1, true);
    }
    let n = x.n_points();
    let lipschitz = gram_spectral_norm(x) + eta1;
    let cols: Vec<EnscColumn> = (0..n)
        .into_par_iter()
        .map(|j| ensc_column(x, j, eta1, eta3, lipschitz, opts))
        .collect();

    let (worst, residual) = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (j, c.kkt_residual))
        .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    if residual > opts.kkt_tol {
        return Err(DsscError::NotConverged {
            solver: "elastic-net proximal gradient",
            iterations: opts.max_iter,
            residual,
            detail: format!(" at column {worst}"),
        });
    }
    let mut triplets = Vec::new();
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.coeffs.iter().enumerate() {
            if v != 0.0 && i != j {
                triplets.push((i, j, v));
            }
        }
    }
    CoeffMatrix::new(CsrMatrix::from_triplets(n, n, &triplets)?, true, false)
}
