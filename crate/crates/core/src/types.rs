//! Shared containers: data matrices, coefficient and affinity matrices,
//! support patterns and hyperparameters.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{DsscError, Result};
use crate::sparse::CsrMatrix;

/// Row/column sums of an affinity must be within this of 1.
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-4;

/// A `d × n` point set, one point per column.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    unit_normalized: bool,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let (d, n) = values.shape();
        if d < 1 {
            return Err(DsscError::invalid("data must have at least one dimension"));
        }
        if n < 2 {
            return Err(DsscError::invalid(format!("need at least 2 points, got {n}")));
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(DsscError::invalid(format!(
                "non-finite entry at dimension {}, point {}",
                p % d,
                p / d
            )));
        }
        Ok(DataMatrix {
            values,
            unit_normalized: false,
        })
    }

    /// Scales every column to unit Euclidean norm. Zero columns are rejected.
    pub fn unit_normalize_columns(&self) -> Result<DataMatrix> {
        let mut values = self.values.clone();
        for (j, mut col) in values.column_iter_mut().enumerate() {
            let norm = col.norm();
            if norm == 0.0 {
                return Err(DsscError::ZeroColumn { index: j });
            }
            col /= norm;
        }
        Ok(DataMatrix {
            values,
            unit_normalized: true,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_unit_normalized(&self) -> bool {
        self.unit_normalized
    }

    /// Reorders points: column `j` of the result is column `perm[j]` of `self`.
    pub fn permute_points(&self, perm: &[usize]) -> DataMatrix {
        let values = DMatrix::from_fn(self.dim(), perm.len(), |i, j| self.values[(i, perm[j])]);
        DataMatrix {
            values,
            unit_normalized: self.unit_normalized,
        }
    }
}

/// Self-expressive coefficients `C` (or one of the nonnegative split parts).
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffMatrix {
    pub entries: CsrMatrix,
    pub zero_diag: bool,
    pub nonneg: bool,
}

impl CoeffMatrix {
    pub fn new(entries: CsrMatrix, zero_diag: bool, nonneg: bool) -> Result<Self> {
        if !entries.is_square() {
            return Err(DsscError::NonSquare {
                rows: entries.nrows(),
                cols: entries.ncols(),
            });
        }
        if !entries.is_finite() {
            return Err(DsscError::invalid("coefficient matrix has non-finite entries"));
        }
        if zero_diag {
            if let Some((i, _, _)) = entries.iter().find(|&(i, j, v)| i == j && v != 0.0) {
                return Err(DsscError::invalid(format!(
                    "diagonal entry ({i}, {i}) must be zero"
                )));
            }
        }
        if nonneg && entries.values().iter().any(|&v| v < 0.0) {
            return Err(DsscError::invalid("coefficient matrix flagged nonnegative has negative entries"));
        }
        Ok(CoeffMatrix {
            entries,
            zero_diag,
            nonneg,
        })
    }

    pub fn from_dense(c: &DMatrix<f64>, zero_diag: bool) -> Result<Self> {
        CoeffMatrix::new(CsrMatrix::from_dense(c, 0.0), zero_diag, false)
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.entries.to_dense()
    }

    /// Elementwise absolute value, the transport cost `|C|`.
    pub fn abs(&self) -> CsrMatrix {
        self.entries.map_values(f64::abs)
    }
}

/// Result of the doubly stochastic membership test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    pub max_row_dev: f64,
    pub max_col_dev: f64,
    pub min_entry: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Measures how far `a` is from the doubly stochastic matrices: largest
/// row-sum and column-sum deviation from 1, and the smallest entry (implicit
/// zeros included).
pub fn validate_affinity(a: &CsrMatrix, tol: f64) -> MembershipReport {
    let max_row_dev = a.row_sums().iter().fold(0.0f64, |m, s| m.max((s - 1.0).abs()));
    let max_col_dev = a.col_sums().iter().fold(0.0f64, |m, s| m.max((s - 1.0).abs()));
    let mut min_entry = a.values().iter().copied().fold(f64::INFINITY, f64::min);
    if a.nnz() < a.nrows() * a.ncols() {
        min_entry = min_entry.min(0.0);
    }
    if !min_entry.is_finite() {
        min_entry = 0.0;
    }
    let passed = a.is_square()
        && a.is_finite()
        && max_row_dev <= tol
        && max_col_dev <= tol
        && min_entry >= -tol;
    MembershipReport {
        max_row_dev,
        max_col_dev,
        min_entry,
        tol,
        passed,
    }
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &CsrMatrix) -> Result<CsrMatrix> {
    if !a.is_square() {
        return Err(DsscError::NonSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    a.linear_combination(0.5, &a.transpose(), 0.5)
}

/// A nonnegative affinity whose rows and columns sum to 1 within
/// `feasibility_tol`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticAffinity {
    entries: CsrMatrix,
    feasibility_tol: f64,
}

impl StochasticAffinity {
    pub fn new(entries: CsrMatrix, feasibility_tol: f64) -> Result<Self> {
        let report = validate_affinity(&entries, feasibility_tol);
        if !report.passed {
            return Err(DsscError::invalid(format!(
                "matrix is not doubly stochastic within {feasibility_tol:e}: row dev {:.3e}, col dev {:.3e}, min entry {:.3e}",
                report.max_row_dev, report.max_col_dev, report.min_entry
            )));
        }
        if entries.values().iter().any(|&v| v < 0.0) {
            return Err(DsscError::invalid("affinity has negative entries"));
        }
        Ok(StochasticAffinity {
            entries,
            feasibility_tol,
        })
    }

    pub fn entries(&self) -> &CsrMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> CsrMatrix {
        self.entries
    }

    pub fn feasibility_tol(&self) -> f64 {
        self.feasibility_tol
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn report(&self) -> MembershipReport {
        validate_affinity(&self.entries, self.feasibility_tol)
    }
}

/// Binary `n × n` support mask, stored as sorted column lists per row. The
/// complement is never materialized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportPattern {
    n: usize,
    rows: Vec<Vec<usize>>,
    include_diagonal: bool,
}

impl SupportPattern {
    /// Sorts and deduplicates each row. When `include_diagonal` is false the
    /// diagonal is stripped.
    pub fn new(n: usize, mut rows: Vec<Vec<usize>>, include_diagonal: bool) -> Result<Self> {
        if rows.len() != n {
            return Err(DsscError::invalid(format!(
                "support has {} rows, expected {n}",
                rows.len()
            )));
        }
        for (i, row) in rows.iter_mut().enumerate() {
            if let Some(&j) = row.iter().find(|&&j| j >= n) {
                return Err(DsscError::IndexOutOfRange { row: i, col: j, n });
            }
            row.sort_unstable();
            row.dedup();
            if !include_diagonal {
                row.retain(|&j| j != i);
            }
        }
        Ok(SupportPattern {
            n,
            rows,
            include_diagonal,
        })
    }

    pub fn empty(n: usize, include_diagonal: bool) -> Self {
        SupportPattern {
            n,
            rows: vec![Vec::new(); n],
            include_diagonal,
        }
    }

    pub fn full(n: usize, include_diagonal: bool) -> Self {
        let rows = (0..n)
            .map(|i| (0..n).filter(|&j| include_diagonal || j != i).collect())
            .collect();
        SupportPattern {
            n,
            rows,
            include_diagonal,
        }
    }

    pub fn diagonal(n: usize) -> Self {
        SupportPattern {
            n,
            rows: (0..n).map(|i| vec![i]).collect(),
            include_diagonal: true,
        }
    }

    /// The pattern of permutation matrix `P` with `P[i, perm[i]] = 1`.
    pub fn from_permutation(perm: &[usize], include_diagonal: bool) -> Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(DsscError::invalid("not a permutation"));
            }
        }
        SupportPattern::new(n, perm.iter().map(|&p| vec![p]).collect(), include_diagonal)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn include_diagonal(&self) -> bool {
        self.include_diagonal
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.rows[i].binary_search(&j).is_ok()
    }

    /// Adds `(i, j)`; returns whether it was new.
    pub fn insert(&mut self, i: usize, j: usize) -> bool {
        if !self.include_diagonal && i == j {
            return false;
        }
        match self.rows[i].binary_search(&j) {
            Ok(_) => false,
            Err(p) => {
                self.rows[i].insert(p, j);
                true
            }
        }
    }

    pub fn union(&self, other: &SupportPattern) -> Result<SupportPattern> {
        if self.n != other.n {
            return Err(DsscError::invalid("support size mismatch"));
        }
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| {
                let mut r = a.clone();
                r.extend_from_slice(b);
                r
            })
            .collect();
        SupportPattern::new(self.n, rows, self.include_diagonal)
    }

    pub fn is_superset_of(&self, other: &SupportPattern) -> bool {
        (0..self.n).all(|i| other.rows[i].iter().all(|&j| self.contains(i, j)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&j| (i, j)))
    }
}

/// Model hyperparameters. `eta1` weighs the coefficient-to-affinity fit (and
/// is the ridge weight of the self-expression), `eta2` scales the affinity and
/// sets the quadratic regularization of the projection, `eta3` is the ℓ1
/// weight. `rho`/`tau` are the ADMM penalty and linearization step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsscParams {
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub rho: f64,
    pub tau: f64,
    pub k: usize,
}

impl DsscParams {
    pub const DEFAULT_RHO: f64 = 0.5;
    pub const DEFAULT_TAU: f64 = 1e-4;

    pub fn new(eta1: f64, eta2: f64, eta3: f64, k: usize) -> Self {
        DsscParams {
            eta1,
            eta2,
            eta3,
            rho: Self::DEFAULT_RHO,
            tau: Self::DEFAULT_TAU,
            k,
        }
    }

    /// Checks positivity; when `n` is given also `2 ≤ k ≤ n`.
    pub fn validate(&self, n: Option<usize>) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(DsscError::invalid(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("eta1", self.eta1)?;
        positive("eta2", self.eta2)?;
        positive("rho", self.rho)?;
        positive("tau", self.tau)?;
        if !(self.eta3 >= 0.0 && self.eta3.is_finite()) {
            return Err(DsscError::invalid(format!("eta3 must be >= 0, got {}", self.eta3)));
        }
        if self.k < 2 {
            return Err(DsscError::invalid(format!("k must be >= 2, got {}", self.k)));
        }
        if let Some(n) = n {
            if self.k > n {
                return Err(DsscError::invalid(format!("k = {} exceeds n = {n}", self.k)));
            }
        }
        Ok(())
    }
}

impl Default for DsscParams {
    /// Scalable-path defaults (ridge self-expression, sparse projection).
    fn default() -> Self {
        DsscParams::new(10.0, 0.001, 0.0, 10)
    }
}
