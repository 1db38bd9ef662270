//! Seeded synthetic data: isotropic Gaussian mixtures.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DataError, Dataset};

/// Ground truth for a generated mixture, for tests and diagnostics.
#[derive(Debug, Clone)]
pub struct Mixture {
    /// Cluster means, row-major `clusters x dim`.
    pub means: Vec<f64>,
    pub dim: usize,
    /// True component of each point.
    pub assignments: Vec<usize>,
}

impl Mixture {
    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c * self.dim..(c + 1) * self.dim]
    }
}

/// Draws `n` points from a mixture of `clusters` unit-variance Gaussians
/// whose means are sampled uniformly from `[-8, 8]^dim`. Identical seeds
/// give identical datasets.
pub fn synthetic_mixture(
    n: usize,
    dim: usize,
    clusters: usize,
    seed: u64,
) -> Result<(Dataset, Mixture), DataError> {
    if n == 0 || dim == 0 || clusters == 0 {
        return Err(DataError::InvalidArgument(
            "n, dim and clusters must all be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean_dist = Uniform::new_inclusive(-8.0, 8.0);
    let means: Vec<f64> = (0..clusters * dim).map(|_| mean_dist.sample(&mut rng)).collect();
    let mut values = Vec::with_capacity(n * dim);
    let mut assignments = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.gen_range(0..clusters);
        assignments.push(c);
        for j in 0..dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            values.push(means[c * dim + j] + noise);
        }
    }
    let data = Dataset::from_real(n, dim, values)?;
    Ok((
        data,
        Mixture {
            means,
            dim,
            assignments,
        },
    ))
}

/// Like [`synthetic_mixture`] but returns only the points.
pub fn generate_synthetic(
    n: usize,
    dim: usize,
    clusters: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    synthetic_mixture(n, dim, clusters, seed).map(|(d, _)| d)
}
