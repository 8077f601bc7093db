//! Clustering and affinity scores.

use serde::{Deserialize, Serialize};

use crate::error::{DsscError, Result};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: f64,
    pub nmi: f64,
    /// Needs an affinity.
    pub spe: Option<f64>,
    #[serde(rename = "nnz")]
    pub nnz_per_col: Option<f64>,
}

/// Scores `pred` against `truth`, plus affinity statistics when given.
pub fn evaluate(pred: &[usize], truth: &[usize], affinity: Option<&CsrMatrix>) -> Result<EvalReport> {
    Ok(EvalReport {
        acc: accuracy(pred, truth)?,
        nmi: nmi(pred, truth)?,
        spe: affinity.map(|a| spe(a, truth)).transpose()?,
        nnz_per_col: affinity.map(|a| nnz_per_col(a, 1e-12)),
    })
}

/// Relabels to `0..k` in order of first appearance.
fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let ids = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (ids, map.len())
}

fn contingency(pred: &[usize], truth: &[usize]) -> Result<(Vec<Vec<usize>>, usize, usize)> {
    if pred.len() != truth.len() {
        return Err(DsscError::invalid(format!(
            "label lengths differ: {} predicted, {} true",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(DsscError::invalid("empty labelings"));
    }
    let (p, kp) = compact(pred);
    let (t, kt) = compact(truth);
    let mut table = vec![vec![0usize; kt]; kp];
    for (a, b) in p.iter().zip(&t) {
        table[*a][*b] += 1;
    }
    Ok((table, kp, kt))
}

/// Fraction of points correctly labeled under the best one-to-one matching
/// of predicted to true clusters.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let (table, kp, kt) = contingency(pred, truth)?;
    let k = kp.max(kt);
    let max = table.iter().flatten().copied().max().unwrap_or(0) as f64;
    let mut cost = vec![vec![max; k]; k];
    for i in 0..kp {
        for j in 0..kt {
            cost[i][j] = max - table[i][j] as f64;
        }
    }
    let assignment = hungarian(&cost);
    let matched: usize = (0..kp)
        .filter(|&i| assignment[i] < kt)
        .map(|i| table[i][assignment[i]])
        .sum();
    Ok(matched as f64 / pred.len() as f64)
}

/// Minimum-cost perfect matching on a square cost matrix; entry `i` of the
/// result is the column assigned to row `i`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // Shortest augmenting paths with row/column potentials, 1-based with a
    // virtual column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

fn entropy(counts: impl Iterator<Item = usize>, total: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information over the arithmetic mean of the two entropies.
/// Two single-cluster labelings score 1.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let (table, kp, kt) = contingency(pred, truth)?;
    let total = pred.len() as f64;
    let rows: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<usize> = (0..kt).map(|j| (0..kp).map(|i| table[i][j]).sum()).collect();
    let hp = entropy(rows.iter().copied(), total);
    let ht = entropy(cols.iter().copied(), total);
    let mut mi = 0.0;
    for i in 0..kp {
        for j in 0..kt {
            let c = table[i][j];
            if c > 0 {
                let pij = c as f64 / total;
                mi += pij * (c as f64 * total / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    let denom = 0.5 * (hp + ht);
    if denom <= 0.0 {
        return Ok(1.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Mean over columns of the fraction of the column's ℓ1 mass that lies on
/// points of other clusters. Returns the score and the number of all-zero
/// columns (which contribute 0).
pub fn spe_with_zero_columns(a: &CsrMatrix, truth: &[usize]) -> Result<(f64, usize)> {
    let n = a.ncols();
    if a.nrows() != truth.len() || n != truth.len() {
        return Err(DsscError::invalid(format!(
            "affinity is {} x {n}, labels have length {}",
            a.nrows(),
            truth.len()
        )));
    }
    let mut total = vec![0.0; n];
    let mut off = vec![0.0; n];
    for (i, j, v) in a.iter() {
        total[j] += v.abs();
        if truth[i] != truth[j] {
            off[j] += v.abs();
        }
    }
    let mut zero = 0;
    let mut sum = 0.0;
    for j in 0..n {
        if total[j] > 0.0 {
            sum += off[j] / total[j];
        } else {
            zero += 1;
        }
    }
    if zero > 0 {
        log::warn!("{zero} all-zero affinity columns counted as subspace preserving");
    }
    Ok((sum / n as f64, zero))
}

pub fn spe(a: &CsrMatrix, truth: &[usize]) -> Result<f64> {
    spe_with_zero_columns(a, truth).map(|r| r.0)
}

/// Mean number of entries per column with `|value| > threshold`.
pub fn nnz_per_col(a: &CsrMatrix, threshold: f64) -> f64 {
    let count = a.values().iter().filter(|v| v.abs() > threshold).count();
    count as f64 / a.ncols().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn brute_accuracy(pred: &[usize], truth: &[usize], k: usize) -> f64 {
        fn perms(k: usize) -> Vec<Vec<usize>> {
            if k == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in perms(k - 1) {
                for pos in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(pos, k - 1);
                    out.push(q);
                }
            }
            out
        }
        perms(k)
            .iter()
            .map(|m| pred.iter().zip(truth).filter(|(p, t)| m[**p] == **t).count())
            .max()
            .unwrap() as f64
            / pred.len() as f64
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2, 0, 0], &[0, 1, 2, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap(), 0.75);
        assert_eq!(brute_accuracy(&[0, 0, 1, 1], &[0, 1, 1, 1], 2), 0.75);
        assert!(accuracy(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn nmi_examples() {
        assert!((nmi(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap().abs() < 1e-15);
        assert_eq!(nmi(&[3, 3, 3], &[1, 1, 1]).unwrap(), 1.0);

        // Direct plug-in computation for pred=[0,0,1,1], truth=[0,1,1,1]:
        // joint (1/4, 1/4, 0, 1/2), marginals (1/2, 1/2) and (1/4, 3/4).
        let h_pred = 2f64.ln();
        let h_truth = -(0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        let mi = 0.25 * (0.25f64 / (0.5 * 0.25)).ln()
            + 0.25 * (0.25f64 / (0.5 * 0.75)).ln()
            + 0.5 * (0.5f64 / (0.5 * 0.75)).ln();
        let want = mi / (0.5 * (h_pred + h_truth));
        assert!((nmi(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn spe_examples() {
        let truth = [0, 0, 1, 1, 2, 2];
        let mut block = DMatrix::zeros(6, 6);
        for i in 0..6 {
            for j in 0..6 {
                if truth[i] == truth[j] {
                    block[(i, j)] = 0.5;
                }
            }
        }
        assert_eq!(spe(&CsrMatrix::from_dense(&block, 0.0), &truth).unwrap(), 0.0);
        let uniform = CsrMatrix::from_dense(&DMatrix::from_element(6, 6, 1.0 / 6.0), 0.0);
        assert!((spe(&uniform, &truth).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let (_, zero) = spe_with_zero_columns(&CsrMatrix::zeros(6, 6), &truth).unwrap();
        assert_eq!(zero, 6);
    }

    #[test]
    fn nnz_examples() {
        assert_eq!(nnz_per_col(&CsrMatrix::identity(5), 1e-12), 1.0);
        let dense = CsrMatrix::from_dense(&DMatrix::from_element(4, 4, 0.3), 0.0);
        assert_eq!(nnz_per_col(&dense, 1e-12), 4.0);
    }

    #[test]
    fn hungarian_small() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = hungarian(&cost);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        assert_eq!(total, 5.0);
    }

    proptest! {
        #[test]
        fn accuracy_matches_brute_force(
            pred in proptest::collection::vec(0usize..4, 12),
            truth in proptest::collection::vec(0usize..4, 12),
        ) {
            let a = accuracy(&pred, &truth).unwrap();
            prop_assert!((a - brute_accuracy(&pred, &truth, 4)).abs() < 1e-15);
        }

        #[test]
        fn scores_invariant_under_relabeling(
            pred in proptest::collection::vec(0usize..5, 20),
            truth in proptest::collection::vec(0usize..5, 20),
            shift in 1usize..5,
        ) {
            let renamed: Vec<usize> = pred.iter().map(|p| (p + shift) % 5 + 10).collect();
            prop_assert!((accuracy(&pred, &truth).unwrap() - accuracy(&renamed, &truth).unwrap()).abs() < 1e-15);
            prop_assert!((nmi(&pred, &truth).unwrap() - nmi(&renamed, &truth).unwrap()).abs() < 1e-12);
            let n = nmi(&pred, &truth).unwrap();
            prop_assert!((0.0..=1.0).contains(&n));
        }

        #[test]
        fn spe_matches_dense_sum(
            vals in proptest::collection::vec(0.0f64..1.0, 64),
            keep in proptest::collection::vec(any::<bool>(), 64),
            truth in proptest::collection::vec(0usize..3, 8),
        ) {
            let m = DMatrix::from_fn(8, 8, |i, j| if keep[i * 8 + j] { vals[i * 8 + j] } else { 0.0 });
            let a = CsrMatrix::from_dense(&m, 0.0);
            let mut want = 0.0;
            for j in 0..8 {
                let col: f64 = (0..8).map(|i| m[(i, j)].abs()).sum();
                if col > 0.0 {
                    let off: f64 = (0..8).filter(|&i| truth[i] != truth[j]).map(|i| m[(i, j)].abs()).sum();
                    want += off / col;
                }
            }
            prop_assert!((spe(&a, &truth).unwrap() - want / 8.0).abs() < 1e-12);
        }

        #[test]
        fn single_label_accuracy_lower_bound(k in 2usize..6, per in 1usize..6) {
            let truth: Vec<usize> = (0..k * per).map(|i| i / per).collect();
            let pred = vec![0; k * per];
            prop_assert!(accuracy(&pred, &truth).unwrap() >= 1.0 / k as f64 - 1e-15);
        }
    }
}
