//! Active-set projection: solve the dual on a small support, then grow the
//! support by every off-support entry the unrestricted primal would switch
//! on, until there are none. The restricted optimum is then optimal for the
//! full problem.

use rayon::prelude::*;

use super::cost::{row_maxima, CostOracle};
use super::dual::{solve_dual, DualOptions, DualPotentials, ProjectionProblem};
use crate::error::{DsscError, Result};
use crate::types::{StochasticAffinity, SupportPattern, DEFAULT_FEASIBILITY_TOL};

#[derive(Debug, Clone, Copy)]
pub struct ActiveSetOptions {
    pub dual: DualOptions,
    /// Diagnostic cap; the loop provably terminates since the support only grows.
    pub max_outer: usize,
    pub feasibility_tol: f64,
}

impl Default for ActiveSetOptions {
    fn default() -> Self {
        ActiveSetOptions {
            dual: DualOptions::default(),
            max_outer: 50,
            feasibility_tol: DEFAULT_FEASIBILITY_TOL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ActiveSetReport {
    /// Number of restricted dual solves.
    pub outer_iterations: usize,
    /// Entries added at each support update.
    pub added: Vec<usize>,
    pub support_nnz: usize,
    pub potentials: DualPotentials,
    pub dual_objective: f64,
    pub grad_inf: f64,
    pub dual_iterations: usize,
}

impl ActiveSetReport {
    pub fn support_updates(&self) -> usize {
        self.added.len()
    }
}

/// Projects `cost` onto the doubly stochastic matrices starting from `s0`,
/// which must admit a doubly stochastic matrix (see `init_support`).
pub fn active_set_project(
    cost: &dyn CostOracle,
    eta2: f64,
    s0: SupportPattern,
    opts: &ActiveSetOptions,
) -> Result<(StochasticAffinity, ActiveSetReport)> {
    let maxima = row_maxima(cost);
    active_set_project_with_maxima(cost, eta2, s0, &maxima, opts)
}

/// As [`active_set_project`] with precomputed row maxima of the cost.
pub fn active_set_project_with_maxima(
    cost: &dyn CostOracle,
    eta2: f64,
    s0: SupportPattern,
    row_max: &[f64],
    opts: &ActiveSetOptions,
) -> Result<(StochasticAffinity, ActiveSetReport)> {
    let n = cost.n();
    if s0.n() != n || row_max.len() != n {
        return Err(DsscError::invalid("support or row maxima do not match the cost size"));
    }
    let mut support = s0;
    let mut pots = DualPotentials::zeros(n);
    let mut added = Vec::new();
    let mut dual_iterations = 0;

    for outer in 1..=opts.max_outer {
        let problem = ProjectionProblem::restricted(cost, &support, eta2)?;
        let sol = solve_dual(&problem, &pots, &opts.dual)?;
        dual_iterations += sol.iterations;
        pots = sol.potentials;

        let new_entries = scan_off_support(cost, &support, &pots, row_max);
        let count: usize = new_entries.iter().map(Vec::len).sum();
        log::debug!(
            "active set: outer {outer}, support {} entries, dual grad {:.2e}, {count} activations",
            support.nnz(),
            sol.grad_inf
        );
        if count == 0 {
            let mut a = problem.recover_primal(&pots);
            super::balance(&mut a);
            let report = ActiveSetReport {
                outer_iterations: outer,
                added,
                support_nnz: support.nnz(),
                potentials: pots,
                dual_objective: sol.objective,
                grad_inf: sol.grad_inf,
                dual_iterations,
            };
            let affinity = StochasticAffinity::new(a, opts.feasibility_tol).map_err(|e| DsscError::NotConverged {
                solver: "active-set projection",
                iterations: outer,
                residual: report.grad_inf,
                detail: format!(": {e}"),
            })?;
            return Ok((affinity, report));
        }
        for (i, cols) in new_entries.into_iter().enumerate() {
            for j in cols {
                support.insert(i, j);
            }
        }
        added.push(count);
    }
    Err(DsscError::NotConverged {
        solver: "active-set projection",
        iterations: opts.max_outer,
        residual: f64::NAN,
        detail: " (support still growing)".into(),
    })
}

/// Off-support `(i, j)` with `c_ij − α_i − β_j > 0`, per row.
///
/// An entry can only activate if `β_j < max_j c_ij − α_i`, so with `β` sorted
/// each row scans a prefix. Sparse costs check their stored entries directly
/// and their implicit zeros against `β_j < −α_i`.
pub fn scan_off_support(
    cost: &dyn CostOracle,
    support: &SupportPattern,
    pots: &DualPotentials,
    row_max: &[f64],
) -> Vec<Vec<usize>> {
    let n = cost.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pots.beta[a].total_cmp(&pots.beta[b]).then(a.cmp(&b)));
    let sorted_beta: Vec<f64> = order.iter().map(|&j| pots.beta[j]).collect();
    let diag_ok = support.include_diagonal();

    (0..n)
        .into_par_iter()
        .map(|i| {
            let a = pots.alpha[i];
            let allowed = |j: usize| (diag_ok || j != i) && !support.contains(i, j);
            let mut out = Vec::new();
            if let Some((idx, vals)) = cost.sparse_row(i) {
                for (&j, &c) in idx.iter().zip(vals) {
                    if c - a - pots.beta[j] > 0.0 && allowed(j) {
                        out.push(j);
                    }
                }
                let end = sorted_beta.partition_point(|&b| b < -a);
                for &j in &order[..end] {
                    if idx.binary_search(&j).is_err() && allowed(j) {
                        out.push(j);
                    }
                }
            } else {
                let end = sorted_beta.partition_point(|&b| b < row_max[i] - a);
                let cand: Vec<usize> = order[..end].iter().copied().filter(|&j| allowed(j)).collect();
                if !cand.is_empty() {
                    let costs = cost.row_entries(i, &cand);
                    for (&j, &c) in cand.iter().zip(&costs) {
                        if c - a - pots.beta[j] > 0.0 {
                            out.push(j);
                        }
                    }
                }
            }
            out.sort_unstable();
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsproj::cost::{DenseCost, SparseCost};
    use crate::dsproj::support::{init_support, SupportInit};
    use crate::sparse::CsrMatrix;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_cost_terminates_immediately() {
        let n = 8;
        let cost = DenseCost::new(DMatrix::identity(n, n)).unwrap();
        let s0 = SupportPattern::diagonal(n)
            .union(&init_support(&cost, &SupportInit { k_top: 0, n_perms: 1, seed: 2, include_diagonal: true }))
            .unwrap();
        let (a, rep) = active_set_project(&cost, 0.8, s0, &ActiveSetOptions::default()).unwrap();
        assert_eq!(rep.outer_iterations, 1);
        assert!((a.entries().to_dense() - DMatrix::<f64>::identity(n, n)).amax() < 1e-10);
    }

    #[test]
    fn matches_full_solve_on_random_cost() {
        let n = 30;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>());
        let cost = DenseCost::new(m).unwrap();
        let s0 = init_support(&cost, &SupportInit { k_top: 3, ..Default::default() });
        let (a, _) = active_set_project(&cost, 0.05, s0, &ActiveSetOptions::default()).unwrap();
        let full = ProjectionProblem::full(&cost, 0.05, true).unwrap();
        let sol = solve_dual(&full, &DualPotentials::zeros(n), &DualOptions::default()).unwrap();
        let b = full.recover_primal(&sol.potentials);
        assert!(a.entries().max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn sparse_cost_scan_sees_implicit_zeros() {
        // Large negative potentials make every implicit zero activate.
        let cost = SparseCost::new(CsrMatrix::from_triplets(3, 3, &[(0, 1, 1.0)]).unwrap()).unwrap();
        let pots = DualPotentials { alpha: vec![-1.0; 3], beta: vec![-1.0; 3] };
        let s = SupportPattern::diagonal(3);
        let found = scan_off_support(&cost, &s, &pots, &row_maxima(&cost));
        assert_eq!(found, vec![vec![1, 2], vec![0, 2], vec![0, 1]]);
    }
}
