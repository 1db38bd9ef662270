//! Binary code initialization from truncated PCA.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CodeMatrix, DataError, Dataset};

// Eigenvalues below this fraction of the largest are treated as zero
// variance.
const RANK_TOL: f64 = 1e-10;

/// Codes produced by [`pca_init`]. `padded_bits` counts trailing bits that
/// had no usable principal direction (degenerate covariance) and were set to
/// constant zero.
#[derive(Debug, Clone)]
pub struct PcaInit {
    pub codes: CodeMatrix,
    pub padded_bits: usize,
}

/// Initializes `l`-bit codes by thresholding the top `l` principal
/// components at zero after centering. The covariance is estimated on a
/// seeded random subset of `subset_size` points; the resulting projections
/// are applied to all points.
///
/// If the subset covariance has fewer than `l` nonzero eigenvalues the
/// remaining bits are padded with constant zeros and reported via
/// `padded_bits`.
pub fn pca_init(
    data: &Dataset,
    l: usize,
    subset_size: usize,
    seed: u64,
) -> Result<PcaInit, DataError> {
    let n = data.n_points();
    let dim = data.dim();
    if n == 0 || dim == 0 {
        return Err(DataError::InvalidArgument("dataset is empty".into()));
    }
    if l == 0 {
        return Err(DataError::InvalidArgument("l must be positive".into()));
    }
    if subset_size == 0 {
        return Err(DataError::InvalidArgument(
            "subset_size must be positive".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx.truncate(subset_size.min(n));
    let s = idx.len();

    let mut mean = vec![0.0; dim];
    let mut row = vec![0.0; dim];
    for &i in &idx {
        data.copy_row_into(i, &mut row);
        for (m, &v) in mean.iter_mut().zip(&row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= s as f64;
    }

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for &i in &idx {
        data.copy_row_into(i, &mut row);
        for a in 0..dim {
            let da = row[a] - mean[a];
            for b in a..dim {
                cov[(a, b)] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..dim {
        for b in a..dim {
            let v = cov[(a, b)] / s as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let usable = order
        .iter()
        .take(l)
        .filter(|&&i| eig.eigenvalues[i] > lambda_max * RANK_TOL && eig.eigenvalues[i] > 0.0)
        .count();

    let mut dirs: Vec<DVector<f64>> = Vec::with_capacity(usable);
    for &i in order.iter().take(usable) {
        let mut v = eig.eigenvectors.column(i).clone_owned();
        canonical_sign(&mut v);
        dirs.push(v);
    }

    let mut codes = CodeMatrix::zeros(n, l);
    for i in 0..n {
        data.copy_row_into(i, &mut row);
        for (bit, v) in dirs.iter().enumerate() {
            let mut proj = 0.0;
            for j in 0..dim {
                proj += v[j] * (row[j] - mean[j]);
            }
            if proj >= 0.0 {
                codes.set(i, bit, true);
            }
        }
    }
    Ok(PcaInit {
        codes,
        padded_bits: l - usable,
    })
}

// Eigenvector signs are arbitrary; make the largest-magnitude component
// positive (first such index on ties) so codes are reproducible.
fn canonical_sign(v: &mut DVector<f64>) {
    let mut arg = 0;
    let mut best = -1.0;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            arg = i;
        }
    }
    if v[arg] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}
