//! Spectral clustering of an affinity: symmetrize, form a Laplacian, embed
//! with its bottom eigenvectors, normalize rows, run k-means.

pub mod kmeans;
pub mod lanczos;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

pub use kmeans::{kmeans, KMeansOptions, KMeansResult, KMeansRun};

use crate::error::{DsscError, Result};
use crate::sparse::CsrMatrix;
use crate::types::{symmetrize, validate_affinity, DEFAULT_FEASIBILITY_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaplacianMode {
    /// `I − Â` when the affinity is doubly stochastic, otherwise symmetric.
    Auto,
    /// `D − Â`.
    Unnormalized,
    /// `I − D^{-1/2} Â D^{-1/2}`.
    Symmetric,
    /// `I − D^{-1} Â`.
    RandomWalk,
}

impl FromStr for LaplacianMode {
    type Err = DsscError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(LaplacianMode::Auto),
            "unnorm" | "unnormalized" => Ok(LaplacianMode::Unnormalized),
            "sym" | "symmetric" => Ok(LaplacianMode::Symmetric),
            "rw" | "random_walk" | "random-walk" => Ok(LaplacianMode::RandomWalk),
            _ => Err(DsscError::invalid(format!(
                "unknown Laplacian '{s}' (expected auto, unnorm, sym or rw)"
            ))),
        }
    }
}

impl fmt::Display for LaplacianMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LaplacianMode::Auto => "auto",
            LaplacianMode::Unnormalized => "unnorm",
            LaplacianMode::Symmetric => "sym",
            LaplacianMode::RandomWalk => "rw",
        })
    }
}

/// A graph Laplacian of the symmetrized affinity `Â`.
#[derive(Debug, Clone)]
pub struct Laplacian {
    /// The Laplacian itself (not symmetric for the random-walk form).
    pub matrix: CsrMatrix,
    /// The form actually built (never `Auto`).
    pub kind: LaplacianMode,
    /// Row sums of `Â`.
    pub degrees: Vec<f64>,
    /// `I − D^{-1/2} Â D^{-1/2}`, whose eigenvectors give the random-walk
    /// ones after scaling by `D^{-1/2}`.
    symmetric_form: Option<CsrMatrix>,
}

impl Laplacian {
    /// The symmetric matrix used for eigen-decomposition.
    pub fn symmetric_matrix(&self) -> &CsrMatrix {
        self.symmetric_form.as_ref().unwrap_or(&self.matrix)
    }
}

/// `diag(d) − a` with `a` square.
fn diag_minus(d: &[f64], a: &CsrMatrix) -> CsrMatrix {
    let n = a.nrows();
    let diag = CsrMatrix::from_triplets(n, n, &d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect::<Vec<_>>())
        .expect("diagonal is valid");
    diag.linear_combination(1.0, a, -1.0).expect("same shape")
}

fn scale_rows_cols(a: &CsrMatrix, left: &[f64], right: &[f64]) -> CsrMatrix {
    let mut out = a.clone();
    let rows: Vec<usize> = a.iter().map(|(i, _, _)| i).collect();
    let indices = a.indices().to_vec();
    for (p, v) in out.values_mut().iter_mut().enumerate() {
        *v *= left[rows[p]] * right[indices[p]];
    }
    out
}

/// Degrees this close to 1 are taken as exactly 1.
pub const UNIT_DEGREE_TOL: f64 = 1e-12;

/// Builds the Laplacian of `Â = (A + Aᵀ)/2`. `tol` decides whether `A` is
/// doubly stochastic for `Auto`.
pub fn laplacian(a: &CsrMatrix, mode: LaplacianMode, tol: f64) -> Result<Laplacian> {
    if a.values().iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(DsscError::invalid("affinity must be finite and nonnegative"));
    }
    let sym = symmetrize(a)?;
    let n = sym.nrows();
    let mut degrees = sym.row_sums();
    // A doubly stochastic affinity has unit degrees; roundoff-sized
    // deviations would only make the three normalizations differ in the last
    // bits, which is enough to reorder a degenerate eigenspace.
    if degrees.iter().all(|d| (d - 1.0).abs() <= UNIT_DEGREE_TOL) {
        degrees.iter_mut().for_each(|d| *d = 1.0);
    }
    let kind = match mode {
        LaplacianMode::Auto => {
            if validate_affinity(a, tol).passed {
                return Ok(Laplacian {
                    matrix: diag_minus(&vec![1.0; n], &sym),
                    kind: LaplacianMode::Unnormalized,
                    degrees,
                    symmetric_form: None,
                });
            }
            LaplacianMode::Symmetric
        }
        m => m,
    };
    if kind != LaplacianMode::Unnormalized {
        if let Some(i) = degrees.iter().position(|&d| d <= 0.0) {
            return Err(DsscError::invalid(format!(
                "point {i} has zero degree; the normalized Laplacian is undefined"
            )));
        }
    }
    let ones = vec![1.0; n];
    let lap = match kind {
        LaplacianMode::Unnormalized => Laplacian {
            matrix: diag_minus(&degrees, &sym),
            kind,
            degrees,
            symmetric_form: None,
        },
        LaplacianMode::Symmetric => {
            let s: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
            Laplacian {
                matrix: diag_minus(&ones, &scale_rows_cols(&sym, &s, &s)),
                kind,
                degrees,
                symmetric_form: None,
            }
        }
        LaplacianMode::RandomWalk => {
            let inv: Vec<f64> = degrees.iter().map(|d| 1.0 / d).collect();
            let s: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
            Laplacian {
                matrix: diag_minus(&ones, &scale_rows_cols(&sym, &inv, &ones)),
                kind,
                degrees,
                symmetric_form: Some(diag_minus(&ones, &scale_rows_cols(&sym, &s, &s))),
            }
        }
        LaplacianMode::Auto => unreachable!(),
    };
    Ok(lap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenSolver {
    /// Dense for `n ≤ 2000`, Lanczos above.
    Auto,
    Dense,
    Lanczos,
}

/// Bottom eigenpairs of a Laplacian and the row-normalized embedding.
#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    /// Row-normalized embedding (`n × k`).
    pub vectors: DMatrix<f64>,
    /// Eigenvectors before normalization, orthonormal for symmetric forms.
    pub eigenvectors: DMatrix<f64>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub row_normalized: bool,
    /// Rows that were zero and left as zero.
    pub zero_rows: usize,
}

/// `y = L x` for a sparse matrix.
fn spmv(m: &CsrMatrix, x: &DVector<f64>) -> DVector<f64> {
    let mut y = vec![0.0; m.nrows()];
    m.mul_vec(x.as_slice(), &mut y);
    DVector::from_vec(y)
}

/// The `k` smallest eigenpairs of `lap`, rows then normalized to unit length.
pub fn embed(lap: &Laplacian, k: usize, solver: EigenSolver) -> Result<SpectralEmbedding> {
    let sym = lap.symmetric_matrix();
    let n = sym.nrows();
    if k == 0 || k >= n {
        return Err(DsscError::invalid(format!("need 1 <= k < n, got k = {k}, n = {n}")));
    }
    let use_dense = match solver {
        EigenSolver::Auto => n <= 2000,
        EigenSolver::Dense => true,
        EigenSolver::Lanczos => false,
    };
    let (eigenvalues, mut vectors) = if use_dense {
        let dense = sym.to_dense();
        let dense = (&dense + dense.transpose()) * 0.5;
        let eig = dense.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
        let vals: Vec<f64> = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
        let cols: Vec<DVector<f64>> = order[..k].iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
        (vals, DMatrix::from_columns(&cols))
    } else {
        // Largest eigenpairs of σI − L, σ a Gershgorin bound on ‖L‖.
        let sigma = (0..n)
            .map(|i| sym.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0f64, f64::max);
        let (vals, vecs) = lanczos::largest_eigenpairs(
            n,
            k,
            sigma,
            |v| v * sigma - spmv(sym, v),
            &lanczos::LanczosOptions::default(),
        )?;
        (vals.iter().map(|t| sigma - t).collect(), vecs)
    };
    if lap.kind == LaplacianMode::RandomWalk {
        for (i, d) in lap.degrees.iter().enumerate() {
            let s = 1.0 / d.sqrt();
            vectors.row_mut(i).scale_mut(s);
        }
    }
    let eigenvectors = vectors.clone();
    let mut zero_rows = 0;
    for mut row in vectors.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        } else {
            zero_rows += 1;
        }
    }
    if zero_rows > 0 {
        log::warn!("{zero_rows} embedding rows are zero and were left unnormalized");
    }
    Ok(SpectralEmbedding {
        vectors,
        eigenvectors,
        eigenvalues,
        row_normalized: true,
        zero_rows,
    })
}

/// Cluster assignment of every point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabels {
    pub labels: Vec<usize>,
    pub k: usize,
}

impl ClusterLabels {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(DsscError::invalid("no labels"));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= k) {
            return Err(DsscError::invalid(format!("label {l} out of range for k = {k}")));
        }
        Ok(ClusterLabels { labels, k })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralOptions {
    pub laplacian: LaplacianMode,
    /// Use `k + 1` eigenvectors.
    pub extra_vec: bool,
    pub kmeans: KMeansOptions,
    pub solver: EigenSolver,
    pub feasibility_tol: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            laplacian: LaplacianMode::Auto,
            extra_vec: false,
            kmeans: KMeansOptions::default(),
            solver: EigenSolver::Auto,
            feasibility_tol: DEFAULT_FEASIBILITY_TOL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub labels: ClusterLabels,
    pub inertia: f64,
    pub eigenvalues: Vec<f64>,
    /// Labels of every k-means restart, for averaging scores.
    pub restart_labels: Vec<Vec<usize>>,
}

/// Laplacian, embedding and k-means in one call.
pub fn cluster(a: &CsrMatrix, k: usize, opts: &SpectralOptions) -> Result<SpectralResult> {
    let n = a.nrows();
    if k < 1 || k > n {
        return Err(DsscError::invalid(format!("k = {k} must be in 1..={n}")));
    }
    let lap = laplacian(a, opts.laplacian, opts.feasibility_tol)?;
    let dims = (k + usize::from(opts.extra_vec)).min(n - 1);
    let emb = embed(&lap, dims, opts.solver)?;
    let km = kmeans(&emb.vectors, k, &opts.kmeans)?;
    Ok(SpectralResult {
        labels: ClusterLabels::new(km.labels().to_vec(), k)?,
        inertia: km.inertia(),
        eigenvalues: emb.eigenvalues,
        restart_labels: km.runs.into_iter().map(|r| r.labels).collect(),
    })
}

/// Labels from the default spectral settings.
pub fn cluster_pipeline(a: &CsrMatrix, k: usize, extra_vec: bool, restarts: usize, seed: u64) -> Result<ClusterLabels> {
    let opts = SpectralOptions {
        extra_vec,
        kmeans: KMeansOptions {
            restarts,
            seed,
            ..KMeansOptions::default()
        },
        ..SpectralOptions::default()
    };
    cluster(a, k, &opts).map(|r| r.labels)
}
