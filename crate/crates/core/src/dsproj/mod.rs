//! Quadratically regularized projection onto the doubly stochastic matrices:
//!
//! `min_A −⟨|C|, A⟩ + (η2/2)‖A‖²  s.t.  A ≥ 0, A1 = 1, Aᵀ1 = 1`.
//!
//! Small `η2` gives sparse affinities (a permutation in the limit), large
//! `η2` approaches the uniform matrix.

pub mod active_set;
pub mod altproj;
pub mod cost;
pub mod dual;
pub mod lbfgs;
pub mod support;

use std::fmt;
use std::str::FromStr;

pub use active_set::{active_set_project, active_set_project_with_maxima, ActiveSetOptions, ActiveSetReport};
pub use altproj::{altproj_project, AltProjOptions, AltProjResult};
pub use cost::{CostOracle, DenseCost, LsrCost, SparseCost};
pub use dual::{solve_dual, DualEval, DualOptions, DualPotentials, DualSolution, ProjectionProblem};
pub use support::{init_support, init_support_with_maxima, SupportInit};

use crate::error::{DsscError, Result};
use crate::sparse::CsrMatrix;
use crate::types::StochasticAffinity;

/// `D(α, β)` and `∇D` over the problem's support.
pub fn dual_objective_grad(problem: &ProjectionProblem, pots: &DualPotentials) -> DualEval {
    problem.evaluate(pots)
}

/// `[|C| − α1ᵀ − 1βᵀ]_+ / η2` over the problem's support.
pub fn recover_primal(problem: &ProjectionProblem, pots: &DualPotentials) -> CsrMatrix {
    problem.recover_primal(pots)
}

/// Diagonal rescaling (Sinkhorn sweeps) of a nearly doubly stochastic matrix
/// until its sums are 1 to roundoff. At small `η2` the primal recovered from
/// the potentials carries errors of order `ε/η2` in its sums, far above what
/// the dual gradient reports; the rescaling changes entries by as little.
/// Matrices further than `1e-6` from the constraints are left alone.
pub fn balance(a: &mut CsrMatrix) {
    const MAX_SWEEPS: usize = 20;
    let dev = |a: &CsrMatrix| {
        a.row_sums()
            .iter()
            .chain(&a.col_sums())
            .fold(0.0f64, |m, s| m.max((s - 1.0).abs()))
    };
    let mut last = dev(a);
    if last > 1e-6 {
        return;
    }
    for _ in 0..MAX_SWEEPS {
        if last <= 4.0 * f64::EPSILON {
            break;
        }
        let before = a.clone();
        let rows = a.row_sums();
        let indptr = a.indptr().to_vec();
        let vals = a.values_mut();
        for (i, s) in rows.iter().enumerate() {
            for v in &mut vals[indptr[i]..indptr[i + 1]] {
                *v /= s;
            }
        }
        let cols = a.col_sums();
        let indices = a.indices().to_vec();
        for (v, j) in a.values_mut().iter_mut().zip(indices) {
            *v /= cols[j];
        }
        let now = dev(a);
        if now >= last {
            *a = before;
            break;
        }
        last = now;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMethod {
    /// Dual on the full support.
    Dual,
    ActiveSet,
    AltProj,
}

impl FromStr for ProjectionMethod {
    type Err = DsscError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(ProjectionMethod::Dual),
            "active-set" | "active_set" => Ok(ProjectionMethod::ActiveSet),
            "altproj" => Ok(ProjectionMethod::AltProj),
            _ => Err(DsscError::invalid(format!(
                "unknown projection method '{s}' (expected dual, active-set or altproj)"
            ))),
        }
    }
}

impl fmt::Display for ProjectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProjectionMethod::Dual => "dual",
            ProjectionMethod::ActiveSet => "active-set",
            ProjectionMethod::AltProj => "altproj",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectOptions {
    pub method: ProjectionMethod,
    pub support: SupportInit,
    pub active_set: ActiveSetOptions,
    pub altproj: AltProjOptions,
}

impl Default for ProjectOptions {
    fn default() -> Self {
        ProjectOptions {
            method: ProjectionMethod::ActiveSet,
            support: SupportInit::default(),
            active_set: ActiveSetOptions::default(),
            altproj: AltProjOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionOutcome {
    pub affinity: StochasticAffinity,
    pub method: ProjectionMethod,
    /// Quasi-Newton iterations (dual methods) or sweeps (alternating projections).
    pub iterations: usize,
    /// Restricted solves, for the active-set method.
    pub outer_iterations: Option<usize>,
}

/// Projects `cost` with the chosen method.
pub fn project(cost: &dyn CostOracle, eta2: f64, opts: &ProjectOptions) -> Result<ProjectionOutcome> {
    let tol = opts.active_set.feasibility_tol;
    match opts.method {
        ProjectionMethod::Dual => {
            let problem = ProjectionProblem::full(cost, eta2, opts.support.include_diagonal)?;
            let sol = solve_dual(&problem, &DualPotentials::zeros(cost.n()), &opts.active_set.dual)?;
            let mut a = problem.recover_primal(&sol.potentials);
            balance(&mut a);
            let affinity = StochasticAffinity::new(a, tol)?;
            Ok(ProjectionOutcome {
                affinity,
                method: opts.method,
                iterations: sol.iterations,
                outer_iterations: None,
            })
        }
        ProjectionMethod::ActiveSet => {
            let (s0, maxima) = init_support_with_maxima(cost, &opts.support);
            let (affinity, rep) = active_set_project_with_maxima(cost, eta2, s0, &maxima, &opts.active_set)?;
            Ok(ProjectionOutcome {
                affinity,
                method: opts.method,
                iterations: rep.dual_iterations,
                outer_iterations: Some(rep.outer_iterations),
            })
        }
        ProjectionMethod::AltProj => {
            if eta2 <= 0.0 || !eta2.is_finite() {
                return Err(DsscError::invalid(format!("eta2 must be > 0, got {eta2}")));
            }
            if !opts.support.include_diagonal {
                return Err(DsscError::invalid(
                    "alternating projections do not support a forbidden diagonal",
                ));
            }
            let dense = cost::to_dense(cost);
            let r = altproj_project(&dense, eta2, &opts.altproj);
            if !r.converged {
                return Err(DsscError::NotConverged {
                    solver: "alternating projections",
                    iterations: r.iterations,
                    residual: r.max_deviation,
                    detail: " (NC)".into(),
                });
            }
            let affinity = StochasticAffinity::new(CsrMatrix::from_dense(&r.matrix, 0.0), opts.altproj.tol)?;
            Ok(ProjectionOutcome {
                affinity,
                method: opts.method,
                iterations: r.iterations,
                outer_iterations: None,
            })
        }
    }
}
