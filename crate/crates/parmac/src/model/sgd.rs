//! Minibatch SGD for submodel fits, with automatic step-size probing.
//!
//! Every pass over a shard first probes a geometric grid of candidate steps
//! on the first `probe_points` points (trial pass per candidate, then loss on
//! the same subset; ties prefer the smaller step, non-finite losses are
//! rejected). Minibatch order is a seeded shuffle derived from structural
//! tags, never from shared RNG state, so results do not depend on the order
//! in which submodels are processed.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{CodeMatrix, Dataset};
use crate::derive_seed;

use super::{all_rows, Decoder, Shard, SubmodelKind};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SgdConfig {
    /// Passes over the data per W step (the `e` of the ring protocol).
    pub epochs: u32,
    pub minibatch: usize,
    /// Center of the step-size probe grid.
    pub eta0: f64,
    /// L2 strength on SVM weights; the bias is not penalized.
    pub lambda: f64,
    /// Probe subset size (the first `min(probe_points, n)` shard points).
    pub probe_points: usize,
    /// Reshuffle minibatch order each epoch; fixed order when off.
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            epochs: 1,
            minibatch: 16,
            eta0: 0.5,
            lambda: 1e-4,
            probe_points: 1000,
            shuffle: true,
            seed: 0,
        }
    }
}

impl SgdConfig {
    /// Geometric candidate grid `eta0 * 2^k`, `k = -4..=4`, ascending.
    pub fn candidate_steps(&self) -> Vec<f64> {
        (-4..=4).map(|k| self.eta0 * f64::powi(2.0, k)).collect()
    }
}

/// Where a training pass sits in the overall run; folded into the minibatch
/// seed so serial, simulated and threaded runs see identical orders.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainScope {
    pub iter: u64,
    pub machine: u64,
}

/// Trains one submodel in place for the given epoch range: per epoch, probe
/// the step size, then one minibatch pass over the shard. Empty shards are a
/// no-op.
///
/// Each epoch is self-contained: the probe restarts from the current weights
/// and the minibatch order is a function of the seed material alone, so
/// splitting a range across calls (as the ring does, one epoch per visit)
/// cannot change the result.
pub fn train_submodel(
    w: &mut [f64],
    kind: SubmodelKind,
    shard: &Shard,
    codes: &CodeMatrix,
    cfg: &SgdConfig,
    scope: TrainScope,
    epochs: Range<u32>,
) {
    if shard.is_empty() {
        return;
    }
    assert!(cfg.minibatch >= 1, "minibatch size must be at least 1");
    debug_assert_eq!(shard.len(), codes.n_points());
    let candidates = cfg.candidate_steps();
    let identity: Vec<usize> = (0..shard.len()).collect();
    let mut order = identity.clone();
    for epoch in epochs {
        let eta = probe_step_size(w, kind, shard, codes, cfg, &candidates);
        if cfg.shuffle {
            let seed = derive_seed(
                cfg.seed,
                &[scope.iter, kind.seed_tag(), u64::from(epoch), scope.machine],
            );
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            order.copy_from_slice(&identity);
            order.shuffle(&mut rng);
        }
        run_pass(w, kind, shard, codes, &order, eta, cfg);
    }
}

/// Probes candidate step sizes on the first `min(probe_points, n)` shard
/// points: for each candidate, a trial pass from the current weights, then
/// the loss on the probe subset. Smallest loss wins; ties prefer the smaller
/// step; non-finite losses are never selected. Falls back to the smallest
/// candidate if every trial diverges.
pub fn probe_step_size(
    w: &[f64],
    kind: SubmodelKind,
    shard: &Shard,
    codes: &CodeMatrix,
    cfg: &SgdConfig,
    candidates: &[f64],
) -> f64 {
    assert!(!candidates.is_empty(), "need at least one candidate step");
    if shard.is_empty() {
        return candidates[0];
    }
    let k = cfg.probe_points.min(shard.len()).max(1);
    let probe_order: Vec<usize> = (0..k).collect();
    let mut best: Option<(f64, f64)> = None; // (loss, eta)
    let mut trial = vec![0.0; w.len()];
    for &eta in candidates {
        trial.copy_from_slice(w);
        run_pass(&mut trial, kind, shard, codes, &probe_order, eta, cfg);
        let loss = probe_loss(&trial, kind, shard, codes, &probe_order, cfg.lambda);
        if loss.is_finite() && best.map_or(true, |(b, _)| loss < b) {
            best = Some((loss, eta));
        }
    }
    best.map_or(candidates[0], |(_, eta)| eta)
}

fn run_pass(
    w: &mut [f64],
    kind: SubmodelKind,
    shard: &Shard,
    codes: &CodeMatrix,
    order: &[usize],
    eta: f64,
    cfg: &SgdConfig,
) {
    match kind {
        SubmodelKind::EncoderBit(bit) => {
            svm_pass(w, shard, codes, bit as usize, order, eta, cfg)
        }
        SubmodelKind::DecoderRow(dim) => {
            decoder_row_pass(w, shard, codes, dim as usize, order, eta, cfg)
        }
    }
}

// One minibatch pass of subgradient descent on the L2-regularized hinge loss
// (lambda/2)|w|^2 + mean(max(0, 1 - y (w.x + b))); the bias is not penalized.
fn svm_pass(
    w: &mut [f64],
    shard: &Shard,
    codes: &CodeMatrix,
    bit: usize,
    order: &[usize],
    eta: f64,
    cfg: &SgdConfig,
) {
    let d = w.len() - 1;
    let mut x = vec![0.0; d];
    let mut g = vec![0.0; w.len()];
    for batch in order.chunks(cfg.minibatch) {
        for gi in g.iter_mut() {
            *gi = 0.0;
        }
        let scale = 1.0 / batch.len() as f64;
        for &local in batch {
            shard.copy_point(local, &mut x);
            let y = if codes.get(local, bit) { 1.0 } else { -1.0 };
            let mut score = w[d];
            for (wi, xi) in w[..d].iter().zip(&x) {
                score += wi * xi;
            }
            if y * score < 1.0 {
                for (gi, xi) in g[..d].iter_mut().zip(&x) {
                    *gi -= y * xi * scale;
                }
                g[d] -= y * scale;
            }
        }
        for i in 0..d {
            w[i] -= eta * (cfg.lambda * w[i] + g[i]);
        }
        w[d] -= eta * g[d];
    }
}

// One minibatch pass of gradient descent on mean squared error for one
// decoder row: inputs are the binary codes plus bias, target is data
// dimension `dim`.
fn decoder_row_pass(
    w: &mut [f64],
    shard: &Shard,
    codes: &CodeMatrix,
    dim: usize,
    order: &[usize],
    eta: f64,
    cfg: &SgdConfig,
) {
    let l = w.len() - 1;
    let mut g = vec![0.0; w.len()];
    for batch in order.chunks(cfg.minibatch) {
        for gi in g.iter_mut() {
            *gi = 0.0;
        }
        let scale = 2.0 / batch.len() as f64;
        for &local in batch {
            let mut pred = w[l];
            for (word_idx, &word) in codes.code_words(local).iter().enumerate() {
                let mut bits = word;
                while bits != 0 {
                    let b = bits.trailing_zeros() as usize;
                    pred += w[word_idx * 64 + b];
                    bits &= bits - 1;
                }
            }
            let r = (pred - shard.value(local, dim)) * scale;
            for (word_idx, &word) in codes.code_words(local).iter().enumerate() {
                let mut bits = word;
                while bits != 0 {
                    let b = bits.trailing_zeros() as usize;
                    g[word_idx * 64 + b] += r;
                    bits &= bits - 1;
                }
            }
            g[l] += r;
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= eta * gi;
        }
    }
}

fn probe_loss(
    w: &[f64],
    kind: SubmodelKind,
    shard: &Shard,
    codes: &CodeMatrix,
    rows: &[usize],
    lambda: f64,
) -> f64 {
    match kind {
        SubmodelKind::EncoderBit(bit) => {
            let d = w.len() - 1;
            let mut x = vec![0.0; d];
            let mut hinge = 0.0;
            for &local in rows {
                shard.copy_point(local, &mut x);
                let y = if codes.get(local, bit as usize) { 1.0 } else { -1.0 };
                let mut score = w[d];
                for (wi, xi) in w[..d].iter().zip(&x) {
                    score += wi * xi;
                }
                hinge += (1.0 - y * score).max(0.0);
            }
            let reg: f64 = w[..d].iter().map(|v| v * v).sum::<f64>() * lambda / 2.0;
            reg + hinge / rows.len() as f64
        }
        SubmodelKind::DecoderRow(dim) => {
            let l = w.len() - 1;
            let mut sse = 0.0;
            for &local in rows {
                let mut pred = w[l];
                for (word_idx, &word) in codes.code_words(local).iter().enumerate() {
                    let mut bits = word;
                    while bits != 0 {
                        let b = bits.trailing_zeros() as usize;
                        pred += w[word_idx * 64 + b];
                        bits &= bits - 1;
                    }
                }
                let r = pred - shard.value(local, dim as usize);
                sse += r * r;
            }
            sse / rows.len() as f64
        }
    }
}

/// Standalone SVM fit: `cfg.epochs` probed passes over the whole dataset
/// from a warm start, labels true/false per point.
pub fn fit_svm_sgd(data: &Dataset, labels: &[bool], w0: &[f64], cfg: &SgdConfig) -> Vec<f64> {
    assert_eq!(labels.len(), data.n_points());
    assert_eq!(w0.len(), data.dim() + 1);
    let mut codes = CodeMatrix::zeros(data.n_points(), 1);
    for (i, &y) in labels.iter().enumerate() {
        codes.set(i, 0, y);
    }
    let rows = all_rows(data.n_points());
    let shard = Shard { data, rows: &rows };
    let mut w = w0.to_vec();
    train_submodel(
        &mut w,
        SubmodelKind::EncoderBit(0),
        &shard,
        &codes,
        cfg,
        TrainScope::default(),
        0..cfg.epochs,
    );
    w
}

/// Standalone SGD decoder fit: every row trained `cfg.epochs` probed passes
/// against the codes.
pub fn fit_decoder_sgd(
    data: &Dataset,
    codes: &CodeMatrix,
    decoder0: &Decoder,
    cfg: &SgdConfig,
) -> Decoder {
    assert_eq!(codes.n_points(), data.n_points());
    let rows = all_rows(data.n_points());
    let shard = Shard { data, rows: &rows };
    let mut decoder = decoder0.clone();
    for dim in 0..decoder0.output_dim() {
        let mut w = decoder.row(dim).to_vec();
        train_submodel(
            &mut w,
            SubmodelKind::DecoderRow(dim as u32),
            &shard,
            codes,
            cfg,
            TrainScope::default(),
            0..cfg.epochs,
        );
        decoder.row_mut(dim).copy_from_slice(&w);
    }
    decoder
}
