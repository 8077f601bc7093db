//! Transport costs `|C|` served on demand, so the active-set solver never
//! needs the full `n × n` matrix.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{DsscError, Result};
use crate::selfexpr::WoodburyCache;
use crate::sparse::CsrMatrix;
use crate::types::DataMatrix;

pub trait CostOracle: Sync {
    fn n(&self) -> usize;

    /// The cost diagonal is identically zero (coefficients with zero diagonal).
    fn zero_diagonal(&self) -> bool;

    /// Writes row `i` into `out` (length `n`).
    fn row(&self, i: usize, out: &mut [f64]);

    /// Costs of row `i` at the given columns.
    fn row_entries(&self, i: usize, cols: &[usize]) -> Vec<f64> {
        let mut buf = vec![0.0; self.n()];
        self.row(i, &mut buf);
        cols.iter().map(|&j| buf[j]).collect()
    }

    /// Stored entries of row `i` when every other entry is exactly zero.
    fn sparse_row(&self, _i: usize) -> Option<(&[usize], &[f64])> {
        None
    }
}

fn check_cost_value(v: f64, i: usize, j: usize) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(DsscError::invalid(format!(
            "cost entry ({i}, {j}) = {v} must be finite and nonnegative"
        )))
    }
}

/// Dense cost matrix.
#[derive(Debug, Clone)]
pub struct DenseCost {
    m: DMatrix<f64>,
    zero_diag: bool,
}

impl DenseCost {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(DsscError::NonSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                check_cost_value(m[(i, j)], i, j)?;
            }
        }
        let zero_diag = (0..m.nrows()).all(|i| m[(i, i)] == 0.0);
        Ok(DenseCost { m, zero_diag })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }
}

impl CostOracle for DenseCost {
    fn n(&self) -> usize {
        self.m.nrows()
    }

    fn zero_diagonal(&self) -> bool {
        self.zero_diag
    }

    fn row(&self, i: usize, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.m[(i, j)];
        }
    }

    fn row_entries(&self, i: usize, cols: &[usize]) -> Vec<f64> {
        cols.iter().map(|&j| self.m[(i, j)]).collect()
    }
}

/// Sparse cost; entries not stored are zero.
#[derive(Debug, Clone)]
pub struct SparseCost {
    m: CsrMatrix,
    zero_diag: bool,
}

impl SparseCost {
    pub fn new(m: CsrMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(DsscError::NonSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        for (i, j, v) in m.iter() {
            check_cost_value(v, i, j)?;
        }
        let zero_diag = (0..m.nrows()).all(|i| m.get(i, i) == 0.0);
        Ok(SparseCost { m, zero_diag })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.m
    }
}

impl CostOracle for SparseCost {
    fn n(&self) -> usize {
        self.m.nrows()
    }

    fn zero_diagonal(&self) -> bool {
        self.zero_diag
    }

    fn row(&self, i: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let (idx, vals) = self.m.row(i);
        for (&j, &v) in idx.iter().zip(vals) {
            out[j] = v;
        }
    }

    fn row_entries(&self, i: usize, cols: &[usize]) -> Vec<f64> {
        cols.iter().map(|&j| self.m.get(i, j)).collect()
    }

    fn sparse_row(&self, i: usize) -> Option<(&[usize], &[f64])> {
        Some(self.m.row(i))
    }
}

/// `|x_iᵀ M x_j|` from a ridge Woodbury factor, with the diagonal masked to 0
/// (the self-expression forbids a point from representing itself).
pub struct LsrCost<'a> {
    x: &'a DataMatrix,
    cache: &'a WoodburyCache,
}

impl<'a> LsrCost<'a> {
    pub fn new(x: &'a DataMatrix, cache: &'a WoodburyCache) -> Result<Self> {
        if cache.m().nrows() != x.dim() {
            return Err(DsscError::invalid("Woodbury cache was built for a different dimension"));
        }
        Ok(LsrCost { x, cache })
    }

    fn weights(&self, i: usize) -> nalgebra::DVector<f64> {
        self.cache.m() * self.x.values().column(i)
    }
}

impl CostOracle for LsrCost<'_> {
    fn n(&self) -> usize {
        self.x.n_points()
    }

    fn zero_diagonal(&self) -> bool {
        true
    }

    fn row(&self, i: usize, out: &mut [f64]) {
        let w = self.weights(i);
        let xv = self.x.values();
        for (j, o) in out.iter_mut().enumerate() {
            *o = if j == i { 0.0 } else { xv.column(j).dot(&w).abs() };
        }
    }

    fn row_entries(&self, i: usize, cols: &[usize]) -> Vec<f64> {
        let w = self.weights(i);
        let xv = self.x.values();
        cols.iter()
            .map(|&j| if j == i { 0.0 } else { xv.column(j).dot(&w).abs() })
            .collect()
    }
}

/// Largest entry of every row.
pub fn row_maxima(cost: &dyn CostOracle) -> Vec<f64> {
    let n = cost.n();
    (0..n)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |buf, i| {
                if let Some((_, vals)) = cost.sparse_row(i) {
                    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    // Implicit zeros count when the row is not full.
                    if vals.len() < n { m.max(0.0) } else { m }
                } else {
                    cost.row(i, buf);
                    buf.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                }
            },
        )
        .collect()
}

/// Materializes the cost as a dense matrix (small problems and tests).
pub fn to_dense(cost: &dyn CostOracle) -> DMatrix<f64> {
    let n = cost.n();
    let mut m = DMatrix::zeros(n, n);
    let mut buf = vec![0.0; n];
    for i in 0..n {
        cost.row(i, &mut buf);
        for (j, &v) in buf.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_and_sparse_agree() {
        let d = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 0.0, 1.0, 0.0, 0.5, 0.0, 0.0, 0.0]);
        let dc = DenseCost::new(d.clone()).unwrap();
        let sc = SparseCost::new(CsrMatrix::from_dense(&d, 0.0)).unwrap();
        assert!(dc.zero_diagonal() && sc.zero_diagonal());
        assert_eq!(to_dense(&dc), to_dense(&sc));
        assert_eq!(row_maxima(&dc), vec![2.0, 1.0, 0.0]);
        assert_eq!(row_maxima(&sc), vec![2.0, 1.0, 0.0]);
        assert_eq!(sc.row_entries(1, &[0, 2]), vec![1.0, 0.5]);
    }

    #[test]
    fn negative_cost_rejected() {
        assert!(DenseCost::new(DMatrix::from_element(2, 2, -1.0)).is_err());
        assert!(DenseCost::new(DMatrix::zeros(2, 3)).is_err());
    }
}
