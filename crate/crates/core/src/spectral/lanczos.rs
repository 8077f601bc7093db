//! Thick-restart block Lanczos for the largest eigenpairs of a symmetric
//! operator, with full reorthogonalization.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DsscError, Result};

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    /// Residual tolerance relative to `norm_bound`.
    pub tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions {
            tol: 1e-11,
            max_restarts: 300,
            seed: 0x5eed,
        }
    }
}

/// Orthogonalizes `w` against the columns of `basis` twice; returns its norm
/// afterwards.
fn orthogonalize(basis: &[DVector<f64>], w: &mut DVector<f64>) -> f64 {
    for _ in 0..2 {
        for v in basis {
            let c = v.dot(w);
            w.axpy(-c, v, 1.0);
        }
    }
    w.norm()
}

/// The `k` largest eigenpairs of the `n × n` symmetric operator `apply`
/// (`out = B v`), in descending order. `norm_bound` bounds `‖B‖`.
pub fn largest_eigenpairs<F>(
    n: usize,
    k: usize,
    norm_bound: f64,
    apply: F,
    opts: &LanczosOptions,
) -> Result<(Vec<f64>, DMatrix<f64>)>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if k == 0 || k > n {
        return Err(DsscError::invalid(format!("cannot compute {k} eigenpairs of a {n} x {n} operator")));
    }
    let block = k;
    let max_basis = (3 * k).max(k + 30).min(n);
    let keep = (k + (k / 2).max(5)).min(max_basis.saturating_sub(block)).max(k);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let random_vector = |rng: &mut ChaCha8Rng| DVector::from_fn(n, |_, _| StandardNormal.sample(rng));

    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(max_basis);
    let mut images: Vec<DVector<f64>> = Vec::with_capacity(max_basis);
    // Directions waiting to be added to the basis.
    let mut pending: Vec<DVector<f64>> = (0..block).map(|_| random_vector(&mut rng)).collect();
    let scale = norm_bound.max(f64::MIN_POSITIVE);
    let mut worst = f64::INFINITY;

    for _restart in 0..=opts.max_restarts {
        // Expand the basis block by block.
        while basis.len() < max_basis {
            if pending.is_empty() {
                let start = basis.len().saturating_sub(block);
                pending = images[start..].to_vec();
            }
            let mut added = false;
            for mut w in std::mem::take(&mut pending) {
                if basis.len() >= max_basis {
                    break;
                }
                let before = w.norm();
                let mut norm = orthogonalize(&basis, &mut w);
                if norm <= 1e-10 * before.max(1e-300) {
                    // Invariant subspace reached in this direction; continue
                    // with a fresh random one.
                    w = random_vector(&mut rng);
                    norm = orthogonalize(&basis, &mut w);
                    if norm <= 1e-10 {
                        continue;
                    }
                }
                w /= norm;
                images.push(apply(&w));
                basis.push(w);
                added = true;
            }
            if !added && basis.len() < max_basis {
                // Whole space exhausted (tiny n).
                break;
            }
        }

        // Rayleigh–Ritz on the current basis.
        let m = basis.len();
        let h = DMatrix::from_fn(m, m, |i, j| 0.5 * (basis[i].dot(&images[j]) + basis[j].dot(&images[i])));
        let eig = h.symmetric_eigen();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let combine = |set: &[DVector<f64>], y: &DVector<f64>| {
            let mut out = DVector::zeros(n);
            for (v, &c) in set.iter().zip(y.iter()) {
                out.axpy(c, v, 1.0);
            }
            out
        };
        let p = keep.min(m);
        let mut ritz = Vec::with_capacity(p);
        let mut ritz_images = Vec::with_capacity(p);
        let mut values = Vec::with_capacity(p);
        for &idx in order.iter().take(p) {
            let y = eig.eigenvectors.column(idx).into_owned();
            ritz.push(combine(&basis, &y));
            ritz_images.push(combine(&images, &y));
            values.push(eig.eigenvalues[idx]);
        }
        let residuals: Vec<DVector<f64>> = (0..k.min(p))
            .map(|i| &ritz_images[i] - &ritz[i] * values[i])
            .collect();
        worst = residuals.iter().map(|r| r.norm()).fold(0.0, f64::max);
        if worst <= opts.tol * scale || m == n {
            let vectors = DMatrix::from_columns(&ritz[..k]);
            return Ok((values[..k].to_vec(), vectors));
        }
        basis = ritz;
        images = ritz_images;
        pending = residuals;
    }
    Err(DsscError::NotConverged {
        solver: "Lanczos eigensolver",
        iterations: opts.max_restarts,
        residual: worst,
        detail: String::new(),
    })
}
