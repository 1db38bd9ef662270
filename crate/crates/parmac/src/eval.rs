//! Retrieval-quality metrics: exact nearest-neighbor ground truth, Hamming
//! search over binary codes, precision and recall@R.

use thiserror::Error;

use crate::data::{hamming_words, CodeMatrix, Dataset};
use crate::model::Encoder;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("k = {k} exceeds base size {n}")]
    KExceedsBase { k: usize, n: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Exact Euclidean k-NN lists: `neighbors` holds `k` base indices per query,
/// ascending by distance with ties broken by ascending index.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub k: usize,
    pub neighbors: Vec<u32>,
}

impl GroundTruth {
    pub fn n_queries(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.neighbors.len() / self.k
        }
    }

    pub fn query(&self, q: usize) -> &[u32] {
        &self.neighbors[q * self.k..(q + 1) * self.k]
    }
}

/// Retrieval evaluation sizes: `k_true` ground-truth neighbors per query,
/// `k_retrieved` codes retrieved by Hamming search.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricConfig {
    pub k_true: usize,
    pub k_retrieved: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            k_true: 100,
            k_retrieved: 100,
        }
    }
}

/// Computes exact squared-Euclidean k-NN of every query against the base
/// set. With `self_exclude`, query `q` skips base index `q` (for querying a
/// set against itself).
pub fn ground_truth_knn(
    base: &Dataset,
    queries: &Dataset,
    k: usize,
    self_exclude: bool,
) -> Result<GroundTruth, EvalError> {
    let n = base.n_points();
    let usable = if self_exclude { n.saturating_sub(1) } else { n };
    if k == 0 || k > usable {
        return Err(EvalError::KExceedsBase { k, n: usable });
    }
    if base.dim() != queries.dim() {
        return Err(EvalError::ShapeMismatch(format!(
            "base dim {} vs query dim {}",
            base.dim(),
            queries.dim()
        )));
    }
    let dim = base.dim();
    let mut q = vec![0.0; dim];
    let mut b = vec![0.0; dim];
    let mut neighbors = Vec::with_capacity(queries.n_points() * k);
    let mut scored: Vec<(f64, u32)> = Vec::with_capacity(n);
    for qi in 0..queries.n_points() {
        queries.copy_row_into(qi, &mut q);
        scored.clear();
        for bi in 0..n {
            if self_exclude && bi == qi {
                continue;
            }
            base.copy_row_into(bi, &mut b);
            let d2: f64 = q.iter().zip(&b).map(|(a, c)| (a - c) * (a - c)).sum();
            scored.push((d2, bi as u32));
        }
        scored.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        neighbors.extend(scored[..k].iter().map(|&(_, i)| i));
    }
    Ok(GroundTruth { k, neighbors })
}

/// Top-`k` base codes by Hamming distance to the query code, ties broken by
/// ascending base index. `skip` removes one base index from consideration.
pub fn hamming_search(
    base: &CodeMatrix,
    query_words: &[u64],
    k: usize,
    skip: Option<u32>,
) -> Vec<u32> {
    let n = base.n_points();
    debug_assert!(k <= n);
    let mut scored: Vec<(u32, u32)> = Vec::with_capacity(n);
    for i in 0..n {
        if skip == Some(i as u32) {
            continue;
        }
        scored.push((hamming_words(base.code_words(i), query_words), i as u32));
    }
    scored.sort_unstable();
    scored.truncate(k);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// Macro-averaged retrieval precision, in percent: per query, the fraction
/// of retrieved indices that are among the ground-truth neighbors.
pub fn precision(gt: &GroundTruth, retrieved: &[Vec<u32>]) -> f64 {
    assert_eq!(gt.n_queries(), retrieved.len());
    if retrieved.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (q, got) in retrieved.iter().enumerate() {
        if got.is_empty() {
            continue;
        }
        let truth = gt.query(q);
        let hits = got.iter().filter(|i| truth.contains(i)).count();
        total += hits as f64 / got.len() as f64;
    }
    100.0 * total / retrieved.len() as f64
}

/// Fraction of queries whose true nearest neighbor appears within the top
/// `r` of the Hamming ranking. A query whose true neighbor ties with other
/// codes at the same distance counts at the top of the tie group (rank = 1 +
/// number of strictly closer codes).
pub fn recall_at_r(
    base_codes: &CodeMatrix,
    query_codes: &CodeMatrix,
    true_nn: &[u32],
    r: usize,
) -> f64 {
    assert_eq!(query_codes.n_points(), true_nn.len());
    if true_nn.is_empty() {
        return 0.0;
    }
    let mut found = 0usize;
    for (q, &nn) in true_nn.iter().enumerate() {
        let qw = query_codes.code_words(q);
        let d_star = hamming_words(base_codes.code_words(nn as usize), qw);
        let mut closer = 0usize;
        for i in 0..base_codes.n_points() {
            if i as u32 != nn && hamming_words(base_codes.code_words(i), qw) < d_star {
                closer += 1;
            }
        }
        if closer < r {
            found += 1;
        }
    }
    found as f64 / true_nn.len() as f64
}

/// Validation-precision of a hash function: encode base and queries, Hamming
/// search, macro precision against the ground truth.
pub fn hash_precision(
    encoder: &Encoder,
    base: &Dataset,
    queries: &Dataset,
    gt: &GroundTruth,
    k_retrieved: usize,
) -> f64 {
    let base_codes = encoder.encode_dataset(base);
    let query_codes = encoder.encode_dataset(queries);
    let retrieved: Vec<Vec<u32>> = (0..queries.n_points())
        .map(|q| hamming_search(&base_codes, query_codes.code_words(q), k_retrieved.min(base.n_points()), None))
        .collect();
    precision(gt, &retrieved)
}
