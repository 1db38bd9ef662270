//! Radial basis function features with byte quantization.
//!
//! Nonlinear hash functions come from composing a linear encoder with RBF
//! features `k_j(x) = exp(-|x - c_j|^2 / (2 sigma^2))` against a fixed set of
//! centers drawn from the training set. Kernel values lie in (0, 1], so they
//! quantize well to one byte each: `b = round(255 k)`, decoded at use time as
//! `b / 255` (absolute error at most 1/510).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset};

#[derive(Debug, Clone)]
pub struct KernelConfig {
    /// Centers, row-major `m x dim`.
    pub centers: Vec<f64>,
    pub dim: usize,
    pub bandwidth: f64,
}

impl KernelConfig {
    pub fn n_centers(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.centers.len() / self.dim
        }
    }

    fn center(&self, j: usize) -> &[f64] {
        &self.centers[j * self.dim..(j + 1) * self.dim]
    }
}

/// Picks `m` distinct training points (seeded, without replacement) as RBF
/// centers.
pub fn pick_rbf_centers(
    data: &Dataset,
    m: usize,
    bandwidth: f64,
    seed: u64,
) -> Result<KernelConfig, DataError> {
    if m == 0 || m > data.n_points() {
        return Err(DataError::InvalidArgument(format!(
            "cannot pick {m} centers from {} points",
            data.n_points()
        )));
    }
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(DataError::InvalidArgument(
            "bandwidth must be positive".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..data.n_points()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx.truncate(m);
    let mut centers = Vec::with_capacity(m * data.dim());
    let mut row = vec![0.0; data.dim()];
    for &i in &idx {
        data.copy_row_into(i, &mut row);
        centers.extend_from_slice(&row);
    }
    Ok(KernelConfig {
        centers,
        dim: data.dim(),
        bandwidth,
    })
}

/// Exact (unquantized) kernel values of one point against all centers.
pub fn rbf_features(x: &[f64], cfg: &KernelConfig) -> Vec<f64> {
    debug_assert_eq!(x.len(), cfg.dim);
    let denom = 2.0 * cfg.bandwidth * cfg.bandwidth;
    (0..cfg.n_centers())
        .map(|j| {
            let c = cfg.center(j);
            let d2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2 / denom).exp()
        })
        .collect()
}

/// Featurizes a whole dataset into byte storage with decode scale 1/255.
pub fn rbf_featurize(data: &Dataset, cfg: &KernelConfig) -> Result<Dataset, DataError> {
    if data.dim() != cfg.dim {
        return Err(DataError::InvalidArgument(format!(
            "dataset dim {} does not match center dim {}",
            data.dim(),
            cfg.dim
        )));
    }
    if cfg.n_centers() == 0 {
        return Err(DataError::InvalidArgument("no centers".into()));
    }
    let m = cfg.n_centers();
    let mut bytes = Vec::with_capacity(data.n_points() * m);
    let mut row = vec![0.0; data.dim()];
    for i in 0..data.n_points() {
        data.copy_row_into(i, &mut row);
        for k in rbf_features(&row, cfg) {
            bytes.push((255.0 * k).round() as u8);
        }
    }
    Dataset::from_bytes(data.n_points(), m, bytes, 1.0 / 255.0)
}
