//! Initial working support: the largest costs of every row plus a few random
//! permutations, which guarantee that a doubly stochastic matrix fits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::cost::CostOracle;
use crate::types::SupportPattern;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SupportInit {
    pub k_top: usize,
    pub n_perms: usize,
    pub seed: u64,
    /// Whether `(i, i)` may ever enter the support.
    pub include_diagonal: bool,
}

impl Default for SupportInit {
    fn default() -> Self {
        SupportInit {
            k_top: 15,
            n_perms: 3,
            seed: 0,
            include_diagonal: true,
        }
    }
}

/// Union of per-row top-`k_top` costs and `n_perms` random permutations.
pub fn init_support(cost: &dyn CostOracle, opts: &SupportInit) -> SupportPattern {
    init_support_with_maxima(cost, opts).0
}

/// As [`init_support`], also returning every row's maximum cost (computed in
/// the same pass).
pub fn init_support_with_maxima(cost: &dyn CostOracle, opts: &SupportInit) -> (SupportPattern, Vec<f64>) {
    let n = cost.n();
    let skip_diag = !opts.include_diagonal || cost.zero_diagonal();
    let per_row: Vec<(Vec<usize>, f64)> = (0..n)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |buf, i| {
                let mut cand: Vec<(f64, usize)> = match cost.sparse_row(i) {
                    Some((idx, vals)) => idx.iter().zip(vals).map(|(&j, &v)| (v, j)).collect(),
                    None => {
                        cost.row(i, buf);
                        buf.iter().enumerate().map(|(j, &v)| (v, j)).collect()
                    }
                };
                let mut max = cand.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
                if cost.sparse_row(i).is_some() && cand.len() < n {
                    max = max.max(0.0);
                }
                if skip_diag {
                    cand.retain(|&(_, j)| j != i);
                }
                let k = opts.k_top.min(cand.len());
                let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
                if k > 0 && k < cand.len() {
                    cand.select_nth_unstable_by(k - 1, order);
                }
                cand.truncate(k);
                (cand.into_iter().map(|c| c.1).collect(), max)
            },
        )
        .collect();
    let (mut rows, maxima): (Vec<Vec<usize>>, Vec<f64>) = per_row.into_iter().unzip();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.n_perms {
        let perm = random_permutation(n, !opts.include_diagonal, &mut rng);
        for (i, &j) in perm.iter().enumerate() {
            rows[i].push(j);
        }
    }
    let support = SupportPattern::new(n, rows, opts.include_diagonal).expect("indices in range");
    (support, maxima)
}

/// Uniform random permutation, or a uniform random `n`-cycle (which has no
/// fixed point) when `derangement` is set.
pub fn random_permutation(n: usize, derangement: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    if !derangement || n < 2 {
        return order;
    }
    // Send each element to its successor along the shuffled cycle.
    let mut perm = vec![0; n];
    for k in 0..n {
        perm[order[k]] = order[(k + 1) % n];
    }
    perm
}
