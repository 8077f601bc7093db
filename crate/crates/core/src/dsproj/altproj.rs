//! Alternating-projections baseline on dense matrices.
//!
//! The regularized projection is the Euclidean projection of `|C|/η2` onto
//! the doubly stochastic matrices. This alternates the closed-form projection
//! onto `{A1 = 1, Aᵀ1 = 1}` with clipping at zero. Plain alternation only
//! finds some point of the intersection, so Dykstra's correction is carried
//! for the clipping step (the affine step needs none) to reach the actual
//! projection.

use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy)]
pub struct AltProjOptions {
    pub max_iter: usize,
    /// Row/column sums within this of 1 count as converged.
    pub tol: f64,
    /// Carry Dykstra's correction (otherwise plain alternation).
    pub dykstra: bool,
}

impl Default for AltProjOptions {
    fn default() -> Self {
        AltProjOptions {
            max_iter: 5000,
            tol: 1e-4,
            dykstra: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AltProjResult {
    pub matrix: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub max_deviation: f64,
}

/// Projection onto `{A : A1 = 1, Aᵀ1 = 1}`:
/// `A_ij + 1/n + s/n² − r_i/n − c_j/n` with row sums `r`, column sums `c`
/// and total `s`.
pub fn affine_project(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let nf = n as f64;
    let r: Vec<f64> = (0..n).map(|i| x.row(i).sum()).collect();
    let c: Vec<f64> = (0..n).map(|j| x.column(j).sum()).collect();
    let s: f64 = r.iter().sum();
    let base = 1.0 / nf + s / (nf * nf);
    DMatrix::from_fn(n, n, |i, j| x[(i, j)] + base - r[i] / nf - c[j] / nf)
}

fn max_sum_deviation(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let mut dev = 0.0f64;
    for i in 0..n {
        dev = dev.max((x.row(i).sum() - 1.0).abs());
        dev = dev.max((x.column(i).sum() - 1.0).abs());
    }
    dev
}

pub fn altproj_project(cost: &DMatrix<f64>, eta2: f64, opts: &AltProjOptions) -> AltProjResult {
    let n = cost.nrows();
    let mut x = cost / eta2;
    let mut q = DMatrix::<f64>::zeros(n, n);
    let mut dev = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let y = affine_project(&x);
        if opts.dykstra {
            let shifted = &y + &q;
            x = shifted.map(|v| v.max(0.0));
            q = shifted - &x;
        } else {
            x = y.map(|v| v.max(0.0));
        }
        dev = max_sum_deviation(&x);
        if dev <= opts.tol {
            return AltProjResult {
                matrix: x,
                iterations: it,
                converged: true,
                max_deviation: dev,
            };
        }
    }
    AltProjResult {
        matrix: x,
        iterations: opts.max_iter,
        converged: false,
        max_deviation: dev,
    }
}
