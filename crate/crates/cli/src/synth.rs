//! Synthetic unions of linear subspaces.

use anyhow::{bail, Result};
use dssc::DataMatrix;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_subspaces: usize,
    pub subspace_dim: usize,
    pub ambient_dim: usize,
    pub points_per_subspace: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Ten 5-dimensional subspaces in R^15.
    pub fn ten_in_fifteen(points_per_subspace: usize, noise_sigma: f64, seed: u64) -> Self {
        SynthSpec {
            num_subspaces: 10,
            subspace_dim: 5,
            ambient_dim: 15,
            points_per_subspace,
            noise_sigma,
            seed,
        }
    }

    pub fn n(&self) -> usize {
        self.num_subspaces * self.points_per_subspace
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_subspaces == 0 || self.points_per_subspace == 0 {
            bail!("need at least one subspace and one point per subspace");
        }
        if self.subspace_dim == 0 || self.subspace_dim >= self.ambient_dim {
            bail!(
                "subspace dimension {} must be in 1..{}",
                self.subspace_dim,
                self.ambient_dim
            );
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            bail!("noise sigma must be >= 0, got {}", self.noise_sigma);
        }
        if self.n() < 2 {
            bail!("need at least two points");
        }
        if self.points_per_subspace < self.subspace_dim + 1 {
            log::warn!(
                "{} points per subspace is fewer than subspace dimension + 1 = {}",
                self.points_per_subspace,
                self.subspace_dim + 1
            );
        }
        Ok(())
    }
}

/// Samples the point set and its subspace labels. Points of subspace `s`
/// occupy columns `s·m .. (s+1)·m`.
pub fn synth(spec: &SynthSpec) -> Result<(DataMatrix, Vec<usize>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (d, r, m) = (spec.ambient_dim, spec.subspace_dim, spec.points_per_subspace);
    let mut x = DMatrix::zeros(d, spec.n());
    let mut labels = Vec::with_capacity(spec.n());
    for s in 0..spec.num_subspaces {
        let g: DMatrix<f64> = DMatrix::from_fn(d, r, |_, _| StandardNormal.sample(&mut rng));
        let basis = g.qr().q();
        for p in 0..m {
            let coeffs: DMatrix<f64> = DMatrix::from_fn(r, 1, |_, _| StandardNormal.sample(&mut rng));
            let mut point = &basis * coeffs;
            if spec.noise_sigma > 0.0 {
                for v in point.iter_mut() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *v += spec.noise_sigma * e;
                }
            }
            x.column_mut(s * m + p).copy_from(&point.column(0));
            labels.push(s);
        }
    }
    Ok((DataMatrix::new(x)?.unit_normalize_columns()?, labels))
}

/// Orthonormal bases of each subspace, regenerated from the seed (used to
/// check points against their subspaces).
pub fn bases(spec: &SynthSpec) -> Result<Vec<DMatrix<f64>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (d, r, m) = (spec.ambient_dim, spec.subspace_dim, spec.points_per_subspace);
    let mut out = Vec::with_capacity(spec.num_subspaces);
    for _ in 0..spec.num_subspaces {
        let g: DMatrix<f64> = DMatrix::from_fn(d, r, |_, _| StandardNormal.sample(&mut rng));
        out.push(g.qr().q());
        // Skip the draws used for this subspace's points.
        let draws = m * (r + if spec.noise_sigma > 0.0 { d } else { 0 });
        for _ in 0..draws {
            let _: f64 = StandardNormal.sample(&mut rng);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn d4_shape() {
        let spec = SynthSpec::ten_in_fifteen(400, 0.0, 1);
        assert_eq!(spec.n(), 4000);
        let small = SynthSpec::ten_in_fifteen(4, 0.0, 1);
        let (x, labels) = synth(&small).unwrap();
        assert_eq!((x.dim(), x.n_points()), (15, 40));
        assert_eq!(labels[..4], [0, 0, 0, 0]);
        assert_eq!(labels[39], 9);
        assert!(x.is_unit_normalized());
    }

    #[test]
    fn noiseless_points_lie_in_their_subspace() {
        let spec = SynthSpec::ten_in_fifteen(8, 0.0, 2);
        let (x, labels) = synth(&spec).unwrap();
        let b = bases(&spec).unwrap();
        for (j, &l) in labels.iter().enumerate() {
            let p = x.values().column(j);
            let proj = &b[l] * (b[l].transpose() * p);
            assert!((proj - p).norm() < 1e-10);
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let spec = SynthSpec::ten_in_fifteen(5, 0.01, 3);
        let (a, la) = synth(&spec).unwrap();
        let (b, lb) = synth(&spec).unwrap();
        assert_eq!(la, lb);
        assert!(a.values().iter().zip(b.values().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn bad_specs_rejected() {
        let mut s = SynthSpec::ten_in_fifteen(5, 0.0, 0);
        s.subspace_dim = 15;
        assert!(synth(&s).is_err());
        let mut s = SynthSpec::ten_in_fifteen(5, 0.0, 0);
        s.noise_sigma = -1.0;
        assert!(synth(&s).is_err());
    }
}
