//! The dual of the quadratically regularized projection, restricted to a
//! support, with primal recovery.
//!
//! For costs `c` on a support `S` and potentials `(α, β)`, let
//! `K_ij = c_ij − α_i − β_j`. The dual objective is
//! `D(α, β) = −Σα − Σβ − (1/2η2) Σ_S [K_ij]_+²` and the recovered primal is
//! `A = [K]_+ / η2` on `S`. `∂D/∂α_i = rowsum_i(A) − 1`, likewise for `β`.

use rayon::prelude::*;

use super::cost::CostOracle;
use super::lbfgs::{self, LbfgsOptions, LbfgsStatus};
use crate::error::{DsscError, Result};
use crate::sparse::CsrMatrix;
use crate::types::SupportPattern;

/// Below this many support entries evaluation stays on one thread.
const PARALLEL_NNZ: usize = 1 << 15;

/// Dual variables `α` (rows) and `β` (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl DualPotentials {
    pub fn zeros(n: usize) -> Self {
        DualPotentials {
            alpha: vec![0.0; n],
            beta: vec![0.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    /// `(α + c1, β − c1)`, which leaves every dual quantity unchanged.
    pub fn shifted(&self, c: f64) -> Self {
        DualPotentials {
            alpha: self.alpha.iter().map(|a| a + c).collect(),
            beta: self.beta.iter().map(|b| b - c).collect(),
        }
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut x = self.alpha.clone();
        x.extend_from_slice(&self.beta);
        x
    }

    fn from_flat(x: &[f64]) -> Self {
        let n = x.len() / 2;
        DualPotentials {
            alpha: x[..n].to_vec(),
            beta: x[n..].to_vec(),
        }
    }
}

/// Costs on a working support together with the regularization weight.
/// Relative size of a reduced cost `c − α − β` that is indistinguishable
/// from zero.
const CANCELLATION: f64 = 4.0 * f64::EPSILON;

#[derive(Debug, Clone)]
pub struct ProjectionProblem {
    n: usize,
    eta2: f64,
    // Row-major support with costs.
    indptr: Vec<usize>,
    indices: Vec<usize>,
    costs: Vec<f64>,
    // Column-major copy for the column sums.
    col_ptr: Vec<usize>,
    col_rows: Vec<usize>,
    col_costs: Vec<f64>,
}

/// Dual objective and its gradient (ascent direction).
#[derive(Debug, Clone)]
pub struct DualEval {
    pub objective: f64,
    pub grad_alpha: Vec<f64>,
    pub grad_beta: Vec<f64>,
}

impl DualEval {
    pub fn grad_inf(&self) -> f64 {
        self.grad_alpha
            .iter()
            .chain(&self.grad_beta)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

fn check_eta2(eta2: f64) -> Result<()> {
    if eta2 > 0.0 && eta2.is_finite() {
        Ok(())
    } else {
        Err(DsscError::invalid(format!("eta2 must be > 0, got {eta2}")))
    }
}

impl ProjectionProblem {
    /// The stored pattern of `cost` is the support; explicit zeros count.
    pub fn new(cost: &CsrMatrix, eta2: f64) -> Result<Self> {
        check_eta2(eta2)?;
        if !cost.is_square() {
            return Err(DsscError::NonSquare {
                rows: cost.nrows(),
                cols: cost.ncols(),
            });
        }
        if let Some((i, j, v)) = cost.iter().find(|&(_, _, v)| !(v.is_finite() && v >= 0.0)) {
            return Err(DsscError::invalid(format!(
                "cost entry ({i}, {j}) = {v} must be finite and nonnegative"
            )));
        }
        Ok(Self::build(
            cost.nrows(),
            eta2,
            cost.indptr().to_vec(),
            cost.indices().to_vec(),
            cost.values().to_vec(),
        ))
    }

    /// Dense cost on the full support.
    pub fn full(cost: &dyn CostOracle, eta2: f64, include_diagonal: bool) -> Result<Self> {
        Self::restricted(cost, &SupportPattern::full(cost.n(), include_diagonal), eta2)
    }

    /// Pulls the costs on `support` from the oracle.
    pub fn restricted(cost: &dyn CostOracle, support: &SupportPattern, eta2: f64) -> Result<Self> {
        check_eta2(eta2)?;
        let n = cost.n();
        if support.n() != n {
            return Err(DsscError::invalid(format!(
                "support is for {} points, cost for {n}",
                support.n()
            )));
        }
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| cost.row_entries(i, support.row(i)))
            .collect();
        let mut indptr = Vec::with_capacity(n + 1);
        indptr.push(0);
        let mut indices = Vec::with_capacity(support.nnz());
        let mut costs = Vec::with_capacity(support.nnz());
        for (i, r) in rows.into_iter().enumerate() {
            for (&j, &v) in support.row(i).iter().zip(&r) {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(DsscError::invalid(format!(
                        "cost entry ({i}, {j}) = {v} must be finite and nonnegative"
                    )));
                }
            }
            indices.extend_from_slice(support.row(i));
            costs.extend(r);
            indptr.push(indices.len());
        }
        Ok(Self::build(n, eta2, indptr, indices, costs))
    }

    fn build(n: usize, eta2: f64, indptr: Vec<usize>, indices: Vec<usize>, costs: Vec<f64>) -> Self {
        let mut col_ptr = vec![0usize; n + 1];
        for &j in &indices {
            col_ptr[j + 1] += 1;
        }
        for j in 0..n {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut next = col_ptr.clone();
        let mut col_rows = vec![0usize; indices.len()];
        let mut col_costs = vec![0.0; indices.len()];
        for i in 0..n {
            for p in indptr[i]..indptr[i + 1] {
                let j = indices[p];
                col_rows[next[j]] = i;
                col_costs[next[j]] = costs[p];
                next[j] += 1;
            }
        }
        ProjectionProblem {
            n,
            eta2,
            indptr,
            indices,
            costs,
            col_ptr,
            col_rows,
            col_costs,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eta2(&self) -> f64 {
        self.eta2
    }

    pub fn nnz(&self) -> usize {
        self.costs.len()
    }

    pub fn support(&self) -> SupportPattern {
        let rows = (0..self.n)
            .map(|i| self.indices[self.indptr[i]..self.indptr[i + 1]].to_vec())
            .collect();
        SupportPattern::new(self.n, rows, true).expect("support indices are valid by construction")
    }

    /// The costs on the support as a sparse matrix.
    pub fn cost_matrix(&self) -> CsrMatrix {
        CsrMatrix::from_parts(self.n, self.n, self.indptr.clone(), self.indices.clone(), self.costs.clone())
            .expect("valid by construction")
    }

    /// Per-row `(Σ[K]_+², Σ[K]_+)` and per-column `Σ[K]_+`.
    fn sums(&self, alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let row = |i: usize| {
            let (mut sq, mut s) = (0.0, 0.0);
            let a = alpha[i];
            for p in self.indptr[i]..self.indptr[i + 1] {
                let k = self.costs[p] - a - beta[self.indices[p]];
                if k > 0.0 {
                    sq += k * k;
                    s += k;
                }
            }
            (sq, s)
        };
        let col = |j: usize| {
            let b = beta[j];
            let mut s = 0.0;
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let k = self.col_costs[p] - alpha[self.col_rows[p]] - b;
                if k > 0.0 {
                    s += k;
                }
            }
            s
        };
        let (rows, cols): (Vec<(f64, f64)>, Vec<f64>) = if self.nnz() >= PARALLEL_NNZ {
            (
                (0..self.n).into_par_iter().map(row).collect(),
                (0..self.n).into_par_iter().map(col).collect(),
            )
        } else {
            ((0..self.n).map(row).collect(), (0..self.n).map(col).collect())
        };
        let sq: f64 = rows.iter().map(|r| r.0).sum();
        let row_sums = rows.into_iter().map(|r| r.1).collect();
        (sq, row_sums, cols)
    }

    /// `D(α, β)` and `∇D`. Row/column sums of the recovered primal are
    /// `1 + ∇D`.
    pub fn evaluate(&self, pots: &DualPotentials) -> DualEval {
        let (sq, rs, cs) = self.sums(&pots.alpha, &pots.beta);
        let inv = 1.0 / self.eta2;
        let total: f64 = pots.alpha.iter().sum::<f64>() + pots.beta.iter().sum::<f64>();
        DualEval {
            objective: -total - 0.5 * inv * sq,
            grad_alpha: rs.iter().map(|s| s * inv - 1.0).collect(),
            grad_beta: cs.iter().map(|s| s * inv - 1.0).collect(),
        }
    }

    /// `−D` and `−∇D` at the stacked point `x = [α; β]`.
    fn negated(&self, x: &[f64], g: &mut [f64]) -> f64 {
        let n = self.n;
        let (sq, rs, cs) = self.sums(&x[..n], &x[n..]);
        let inv = 1.0 / self.eta2;
        for i in 0..n {
            g[i] = 1.0 - rs[i] * inv;
            g[n + i] = 1.0 - cs[i] * inv;
        }
        x.iter().sum::<f64>() + 0.5 * inv * sq
    }

    /// `A = [K]_+ / η2` on the support; zero entries are not stored.
    pub fn recover_primal(&self, pots: &DualPotentials) -> CsrMatrix {
        let inv = 1.0 / self.eta2;
        let mut indptr = Vec::with_capacity(self.n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..self.n {
            for p in self.indptr[i]..self.indptr[i + 1] {
                let j = self.indices[p];
                let (c, a, b) = (self.costs[p], pots.alpha[i], pots.beta[j]);
                let k = c - a - b;
                // Below the rounding error of the subtraction the sign is noise.
                if k > CANCELLATION * (c.abs() + a.abs() + b.abs()) {
                    indices.push(j);
                    values.push(k * inv);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix::from_parts(self.n, self.n, indptr, indices, values).expect("valid by construction")
    }

    /// `−⟨c, A⟩ + (η2/2)‖A‖²` for `A` supported inside the support.
    pub fn primal_objective(&self, a: &CsrMatrix) -> f64 {
        let mut lin = 0.0;
        let mut sq = 0.0;
        for (i, j, v) in a.iter() {
            let row = &self.indices[self.indptr[i]..self.indptr[i + 1]];
            let c = match row.binary_search(&j) {
                Ok(p) => self.costs[self.indptr[i] + p],
                Err(_) => 0.0,
            };
            lin += c * v;
            sq += v * v;
        }
        -lin + 0.5 * self.eta2 * sq
    }

    /// Upper bound on the dual value over any support that admits a doubly
    /// stochastic matrix: `D ≤ P(A) ≤ (η2/2)‖A‖² ≤ η2·n/2`.
    pub fn feasible_dual_bound(&self) -> f64 {
        0.5 * self.eta2 * self.n as f64
    }

    /// Generalized Hessian-vector product of `−D` plus a tiny ridge.
    fn hess_vec(&self, active: &[bool], rdeg: &[f64], cdeg: &[f64], ridge: f64, v: &[f64], out: &mut [f64]) {
        let n = self.n;
        let inv = 1.0 / self.eta2;
        for i in 0..n {
            out[i] = (rdeg[i] * inv + ridge) * v[i];
            out[n + i] = (cdeg[i] * inv + ridge) * v[n + i];
        }
        for i in 0..n {
            let mut acc = 0.0;
            for p in self.indptr[i]..self.indptr[i + 1] {
                if active[p] {
                    let j = self.indices[p];
                    acc += v[n + j];
                    out[n + j] += inv * v[i];
                }
            }
            out[i] += inv * acc;
        }
    }

    /// Semismooth Newton refinement of a nearly optimal point. Returns the
    /// improved point, or `None` if no step made progress.
    fn newton_polish(&self, x0: &[f64], tol: f64, max_steps: usize) -> Option<(Vec<f64>, f64, f64)> {
        let n = self.n;
        let mut x = x0.to_vec();
        let mut g = vec![0.0; 2 * n];
        let mut f = self.negated(&x, &mut g);
        let mut improved = false;
        // Entries with `cost − α − β > −slack` enter the Hessian. A strictly
        // active set can split into components with unequal row and column
        // counts, whose residual no Newton step reaches; widening the set
        // reconnects them.
        let mut slack = 0.0;
        let mut widenings = 0;
        for _ in 0..max_steps {
            let ginf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if ginf <= tol {
                break;
            }
            let mut active = vec![false; self.nnz()];
            let mut rdeg = vec![0.0; n];
            let mut cdeg = vec![0.0; n];
            for i in 0..n {
                for p in self.indptr[i]..self.indptr[i + 1] {
                    let j = self.indices[p];
                    if self.costs[p] - x[i] - x[n + j] > -slack {
                        active[p] = true;
                        rdeg[i] += 1.0;
                        cdeg[j] += 1.0;
                    }
                }
            }
            let maxdeg = rdeg.iter().chain(&cdeg).fold(1.0f64, |m, &v| m.max(v));
            let ridge = 1e-12 * maxdeg / self.eta2;
            let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
            let d = self.pcg(&active, &rdeg, &cdeg, ridge, &rhs);
            let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                if !widen(&mut slack, &mut widenings, self.eta2 * ginf) {
                    break;
                }
                continue;
            }
            let mut t = 1.0;
            let mut accepted = None;
            let mut gt = vec![0.0; 2 * n];
            for _ in 0..40 {
                let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                let ft = self.negated(&xt, &mut gt);
                let gtinf = gt.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                // Near the optimum the decrease is below roundoff in `f`, so a
                // smaller gradient is also accepted.
                if ft <= f + 1e-4 * t * slope || (ft <= f + 1e-12 * f.abs().max(1.0) && gtinf < 0.5 * ginf) {
                    accepted = Some((xt, ft));
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some((xt, ft)) => {
                    x = xt;
                    f = ft;
                    self.negated(&x, &mut g);
                    improved = true;
                    let gnew = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    if gnew > 0.9 * ginf && !widen(&mut slack, &mut widenings, self.eta2 * ginf) {
                        break;
                    }
                }
                None => {
                    if !widen(&mut slack, &mut widenings, self.eta2 * ginf) {
                        break;
                    }
                }
            }
        }
        if improved {
            let ginf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            Some((x, f, ginf))
        } else {
            None
        }
    }

    /// Jacobi-preconditioned conjugate gradients on the generalized Hessian.
    fn pcg(&self, active: &[bool], rdeg: &[f64], cdeg: &[f64], ridge: f64, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let inv = 1.0 / self.eta2;
        let precond: Vec<f64> = (0..2 * n)
            .map(|k| {
                let deg = if k < n { rdeg[k] } else { cdeg[k - n] };
                1.0 / (deg * inv + ridge)
            })
            .collect();
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = vec![0.0; 2 * n];
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&precond).map(|(a, p)| a * p).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut hp = vec![0.0; 2 * n];
        for _ in 0..(4 * n).max(50) {
            self.hess_vec(active, rdeg, cdeg, ridge, &p, &mut hp);
            let php: f64 = p.iter().zip(&hp).map(|(a, b)| a * b).sum();
            if !(php > 0.0) {
                break;
            }
            let step = rz / php;
            for k in 0..2 * n {
                x[k] += step * p[k];
                r[k] -= step * hp[k];
            }
            let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= 1e-12 * bnorm {
                break;
            }
            for k in 0..2 * n {
                z[k] = r[k] * precond[k];
            }
            let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_next / rz;
            rz = rz_next;
            for k in 0..2 * n {
                p[k] = z[k] + beta * p[k];
            }
        }
        x
    }
}

/// Grows the polish slack from `base` by factors of ten; false once spent.
fn widen(slack: &mut f64, widenings: &mut usize, base: f64) -> bool {
    const MAX_WIDENINGS: usize = 12;
    if *widenings >= MAX_WIDENINGS || base <= 0.0 {
        return false;
    }
    *widenings += 1;
    *slack = if *slack == 0.0 { base } else { *slack * 10.0 };
    true
}

/// Settings for [`solve_dual`].
#[derive(Debug, Clone, Copy)]
pub struct DualOptions {
    pub lbfgs: LbfgsOptions,
    /// Refine the quasi-Newton result with semismooth Newton steps.
    pub polish: bool,
    pub polish_tol: f64,
    pub max_polish_steps: usize,
}

impl Default for DualOptions {
    fn default() -> Self {
        DualOptions {
            lbfgs: LbfgsOptions::default(),
            polish: true,
            polish_tol: 1e-13,
            max_polish_steps: 30,
        }
    }
}

impl DualOptions {
    /// Quasi-Newton only, stopping at `grad_tol`.
    pub fn loose(grad_tol: f64) -> Self {
        DualOptions {
            lbfgs: LbfgsOptions {
                grad_tol,
                ..LbfgsOptions::default()
            },
            polish: false,
            ..DualOptions::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub potentials: DualPotentials,
    /// Dual objective `D` at the solution.
    pub objective: f64,
    /// Largest row/column sum deviation of the recovered primal.
    pub grad_inf: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Maximizes the dual on the problem's support from `init`.
pub fn solve_dual(problem: &ProjectionProblem, init: &DualPotentials, opts: &DualOptions) -> Result<DualSolution> {
    let n = problem.n();
    if init.n() != n {
        return Err(DsscError::invalid("initial potentials have the wrong length"));
    }
    if let Some(i) = (0..n).find(|&i| problem.indptr[i] == problem.indptr[i + 1]) {
        return Err(DsscError::InfeasibleSupport {
            objective: f64::INFINITY,
            bound: problem.feasible_dual_bound(),
            detail: format!("row {i} has an empty support"),
        });
    }
    let bound = problem.feasible_dual_bound();
    let lower = -bound - 1e-9 * bound.max(1.0);
    let res = lbfgs::minimize(|x, g| problem.negated(x, g), init.to_flat(), &opts.lbfgs, Some(lower));
    if res.status == LbfgsStatus::BelowBound || -res.f > bound * (1.0 + 1e-9) + 1e-12 {
        return Err(DsscError::InfeasibleSupport {
            objective: -res.f,
            bound,
            detail: "no doubly stochastic matrix fits the support; add permutations to it".into(),
        });
    }
    let (mut x, mut f, mut ginf) = (res.x, res.f, res.grad_inf);
    if opts.polish && ginf > opts.polish_tol {
        if let Some((xp, fp, gp)) = problem.newton_polish(&x, opts.polish_tol, opts.max_polish_steps) {
            if gp < ginf {
                x = xp;
                f = fp;
                ginf = gp;
            }
        }
    }
    if ginf > opts.lbfgs.grad_tol {
        return Err(DsscError::NotConverged {
            solver: "projection dual",
            iterations: res.iterations,
            residual: ginf,
            detail: format!(" ({:?})", res.status),
        });
    }
    Ok(DualSolution {
        potentials: DualPotentials::from_flat(&x),
        objective: -f,
        grad_inf: ginf,
        iterations: res.iterations,
        evaluations: res.evaluations,
    })
}
