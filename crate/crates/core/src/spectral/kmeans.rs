//! k-means with k-means++ seeding and parallel restarts.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{DsscError, Result};

#[derive(Debug, Clone, Copy)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            restarts: 16,
            max_iter: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansRun {
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// The lowest-inertia run (earliest restart on ties).
    pub best: usize,
    pub runs: Vec<KMeansRun>,
}

impl KMeansResult {
    pub fn labels(&self) -> &[usize] {
        &self.runs[self.best].labels
    }

    pub fn inertia(&self) -> f64 {
        self.runs[self.best].inertia
    }
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centers: &DMatrix<f64>, c: usize) -> f64 {
    (0..points.ncols())
        .map(|d| {
            let t = points[(i, d)] - centers[(c, d)];
            t * t
        })
        .sum()
}

/// Clusters the rows of `points` into `k` groups.
pub fn kmeans(points: &DMatrix<f64>, k: usize, opts: &KMeansOptions) -> Result<KMeansResult> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(DsscError::invalid(format!("k = {k} must be in 1..={n}")));
    }
    if opts.restarts == 0 {
        return Err(DsscError::invalid("need at least one k-means restart"));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(DsscError::invalid("k-means input has non-finite entries"));
    }
    let runs: Vec<KMeansRun> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(r as u64);
            lloyd(points, k, opts.max_iter, &mut rng)
        })
        .collect();
    let best = runs
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.inertia < runs[b].inertia { i } else { b });
    Ok(KMeansResult { best, runs })
}

fn plus_plus(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, dim) = points.shape();
    let mut centers = DMatrix::zeros(k, dim);
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from(&points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centers, 0)).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from(&points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points, i, &centers, c));
        }
    }
    centers
}

fn assign(points: &DMatrix<f64>, centers: &DMatrix<f64>, labels: &mut [usize], dist: &mut [f64]) -> bool {
    let mut changed = false;
    for i in 0..points.nrows() {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for c in 0..centers.nrows() {
            let d = sq_dist(points, i, centers, c);
            if d < bd {
                bd = d;
                best = c;
            }
        }
        if labels[i] != best {
            labels[i] = best;
            changed = true;
        }
        dist[i] = bd;
    }
    changed
}

fn lloyd(points: &DMatrix<f64>, k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> KMeansRun {
    let (n, dim) = points.shape();
    let mut centers = plus_plus(points, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];
    let mut iterations = 0;
    for it in 0..max_iter.max(1) {
        iterations = it + 1;
        let changed = assign(points, &centers, &mut labels, &mut dist);
        if !changed && it > 0 {
            break;
        }
        let mut counts = vec![0usize; k];
        let mut sums = DMatrix::zeros(k, dim);
        for i in 0..n {
            counts[labels[i]] += 1;
            let mut row = sums.row_mut(labels[i]);
            row += points.row(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = sums.row(c) / counts[c] as f64;
                centers.row_mut(c).copy_from(&mean);
            } else {
                // Reseed an empty cluster at the point farthest from its center.
                let far = (0..n).fold(0, |b, i| if dist[i] > dist[b] { i } else { b });
                if dist[far] > 0.0 {
                    centers.row_mut(c).copy_from(&points.row(far));
                    dist[far] = 0.0;
                }
            }
        }
    }
    assign(points, &centers, &mut labels, &mut dist);
    KMeansRun {
        labels,
        inertia: dist.iter().sum(),
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_triples() {
        let pts = DMatrix::from_row_slice(
            9,
            2,
            &[
                0.0, 0.0, 0.1, 0.0, 0.0, 0.1, //
                10.0, 10.0, 10.1, 10.0, 10.0, 10.1, //
                -10.0, 10.0, -9.9, 10.0, -10.0, 10.1,
            ],
        );
        let r = kmeans(&pts, 3, &KMeansOptions::default()).unwrap();
        let l = r.labels();
        for t in 0..3 {
            assert_eq!(l[3 * t], l[3 * t + 1]);
            assert_eq!(l[3 * t], l[3 * t + 2]);
        }
        assert!(l[0] != l[3] && l[3] != l[6] && l[0] != l[6]);
        // Within-triple scatter: each triple has sum of squared deviations 0.02·(2/3)... computed directly.
        let mut want = 0.0;
        for t in 0..3 {
            let rows: Vec<_> = (0..3).map(|r| pts.row(3 * t + r).into_owned()).collect();
            let mean = (&rows[0] + &rows[1] + &rows[2]) / 3.0;
            want += rows.iter().map(|r| (r - &mean).norm_squared()).sum::<f64>();
        }
        assert!((r.inertia() - want).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_single_cluster() {
        let pts = DMatrix::from_element(6, 3, 0.5);
        let r = kmeans(&pts, 1, &KMeansOptions::default()).unwrap();
        assert!(r.labels().iter().all(|&l| l == 0));
        assert_eq!(r.inertia(), 0.0);
        // More clusters than distinct rows still returns valid labels.
        let r = kmeans(&pts, 3, &KMeansOptions::default()).unwrap();
        assert!(r.labels().iter().all(|&l| l < 3));
        assert_eq!(r.inertia(), 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let pts = DMatrix::from_fn(40, 2, |i, j| ((i * 7 + j * 13) % 11) as f64);
        let opts = KMeansOptions { seed: 42, ..Default::default() };
        let a = kmeans(&pts, 4, &opts).unwrap();
        let b = kmeans(&pts, 4, &opts).unwrap();
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a.inertia(), b.inertia());
    }
}
