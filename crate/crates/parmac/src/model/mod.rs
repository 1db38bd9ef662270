//! The binary autoencoder: step-function linear encoder, linear decoder,
//! reconstruction objectives, and per-submodel trainers.
//!
//! The model factors into `L + D` independent submodels: encoder bit `l` is a
//! linear classifier with weights `a_l` (one row of `A`), decoder output `d`
//! is a linear regressor with weights `f_d` (one row of `F`). Both carry a
//! trailing bias weight. This independence is what lets the distributed
//! runtime circulate submodels one at a time.

mod checkpoint;
mod lsq;
mod sgd;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use lsq::fit_decoder_lsq;
pub use sgd::{
    fit_decoder_sgd, fit_svm_sgd, probe_step_size, train_submodel, SgdConfig, TrainScope,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CodeMatrix, Dataset};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("gram matrix not positive definite even with ridge fallback")]
    IllConditioned,
}

/// One circulating unit of the model: an encoder bit or a decoder row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SubmodelKind {
    EncoderBit(u32),
    DecoderRow(u32),
}

impl SubmodelKind {
    /// Stable tag for seed derivation, distinct across kinds.
    pub fn seed_tag(self) -> u64 {
        match self {
            SubmodelKind::EncoderBit(l) => u64::from(l),
            SubmodelKind::DecoderRow(d) => (1 << 32) | u64::from(d),
        }
    }

    /// Flat index in `0..L+D`: encoder bits first, then decoder rows.
    pub fn flat_index(self, l: usize) -> usize {
        match self {
            SubmodelKind::EncoderBit(b) => b as usize,
            SubmodelKind::DecoderRow(d) => l + d as usize,
        }
    }

    pub fn from_flat_index(idx: usize, l: usize) -> SubmodelKind {
        if idx < l {
            SubmodelKind::EncoderBit(idx as u32)
        } else {
            SubmodelKind::DecoderRow((idx - l) as u32)
        }
    }
}

/// A machine's slice of the data: global row indices into a shared dataset.
/// Local position `i` maps to `data` row `rows[i]`; local code matrices use
/// local positions.
#[derive(Debug, Clone, Copy)]
pub struct Shard<'a> {
    pub data: &'a Dataset,
    pub rows: &'a [usize],
}

impl<'a> Shard<'a> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn copy_point(&self, local: usize, buf: &mut [f64]) {
        self.data.copy_row_into(self.rows[local], buf);
    }

    pub fn value(&self, local: usize, dim: usize) -> f64 {
        self.data.get(self.rows[local], dim)
    }
}

/// Step-function linear encoder `h(x) = s(Ax)`, one row per code bit, bias
/// weight last. `s(t) = 1` iff `t >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    l: usize,
    d: usize,
    weights: Vec<f64>, // row-major L x (D+1)
}

impl Encoder {
    pub fn zeros(l: usize, d: usize) -> Self {
        Encoder {
            l,
            d,
            weights: vec![0.0; l * (d + 1)],
        }
    }

    pub fn from_weights(l: usize, d: usize, weights: Vec<f64>) -> Result<Self, ModelError> {
        if weights.len() != l * (d + 1) {
            return Err(ModelError::ShapeMismatch(format!(
                "encoder expects {} weights, got {}",
                l * (d + 1),
                weights.len()
            )));
        }
        Ok(Encoder { l, d, weights })
    }

    pub fn bits(&self) -> usize {
        self.l
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, bit: usize) -> &[f64] {
        &self.weights[bit * (self.d + 1)..(bit + 1) * (self.d + 1)]
    }

    pub fn row_mut(&mut self, bit: usize) -> &mut [f64] {
        &mut self.weights[bit * (self.d + 1)..(bit + 1) * (self.d + 1)]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn encode_bit(&self, bit: usize, x: &[f64]) -> bool {
        let row = self.row(bit);
        let mut t = row[self.d]; // bias
        for (w, v) in row[..self.d].iter().zip(x) {
            t += w * v;
        }
        t >= 0.0
    }

    pub fn encode_point(&self, x: &[f64]) -> u64 {
        debug_assert!(self.l <= 64);
        let mut code = 0u64;
        for bit in 0..self.l {
            if self.encode_bit(bit, x) {
                code |= 1 << bit;
            }
        }
        code
    }

    pub fn encode_dataset(&self, data: &Dataset) -> CodeMatrix {
        let mut codes = CodeMatrix::zeros(data.n_points(), self.l);
        let mut buf = vec![0.0; self.d];
        for i in 0..data.n_points() {
            data.copy_row_into(i, &mut buf);
            for bit in 0..self.l {
                if self.encode_bit(bit, &buf) {
                    codes.set(i, bit, true);
                }
            }
        }
        codes
    }
}

/// Linear decoder `f(z) = Fz + b`, one row per output dimension, bias last.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    d: usize,
    l: usize,
    weights: Vec<f64>, // row-major D x (L+1)
}

impl Decoder {
    pub fn zeros(d: usize, l: usize) -> Self {
        Decoder {
            d,
            l,
            weights: vec![0.0; d * (l + 1)],
        }
    }

    pub fn from_weights(d: usize, l: usize, weights: Vec<f64>) -> Result<Self, ModelError> {
        if weights.len() != d * (l + 1) {
            return Err(ModelError::ShapeMismatch(format!(
                "decoder expects {} weights, got {}",
                d * (l + 1),
                weights.len()
            )));
        }
        Ok(Decoder { d, l, weights })
    }

    pub fn output_dim(&self) -> usize {
        self.d
    }

    pub fn code_bits(&self) -> usize {
        self.l
    }

    pub fn row(&self, dim: usize) -> &[f64] {
        &self.weights[dim * (self.l + 1)..(dim + 1) * (self.l + 1)]
    }

    pub fn row_mut(&mut self, dim: usize) -> &mut [f64] {
        &mut self.weights[dim * (self.l + 1)..(dim + 1) * (self.l + 1)]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Reconstruction of a packed code (valid for `l <= 64`).
    pub fn decode_u64(&self, code: u64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.d);
        for (dim, o) in out.iter_mut().enumerate() {
            let row = self.row(dim);
            let mut v = row[self.l];
            let mut bits = code;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                v += row[b];
                bits &= bits - 1;
            }
            *o = v;
        }
    }

    pub fn decode_words(&self, words: &[u64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.d);
        for (dim, o) in out.iter_mut().enumerate() {
            let row = self.row(dim);
            let mut v = row[self.l];
            for (w_idx, &word) in words.iter().enumerate() {
                let mut bits = word;
                while bits != 0 {
                    let b = bits.trailing_zeros() as usize;
                    v += row[w_idx * 64 + b];
                    bits &= bits - 1;
                }
            }
            *o = v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BAModel {
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl BAModel {
    pub fn zeros(l: usize, d: usize) -> Self {
        BAModel {
            encoder: Encoder::zeros(l, d),
            decoder: Decoder::zeros(d, l),
        }
    }

    pub fn bits(&self) -> usize {
        self.encoder.bits()
    }

    pub fn dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn submodels(&self) -> usize {
        self.bits() + self.dim()
    }

    pub fn submodel_len(&self, kind: SubmodelKind) -> usize {
        match kind {
            SubmodelKind::EncoderBit(_) => self.dim() + 1,
            SubmodelKind::DecoderRow(_) => self.bits() + 1,
        }
    }

    pub fn submodel(&self, kind: SubmodelKind) -> &[f64] {
        match kind {
            SubmodelKind::EncoderBit(l) => self.encoder.row(l as usize),
            SubmodelKind::DecoderRow(d) => self.decoder.row(d as usize),
        }
    }

    pub fn set_submodel(&mut self, kind: SubmodelKind, weights: &[f64]) {
        match kind {
            SubmodelKind::EncoderBit(l) => {
                self.encoder.row_mut(l as usize).copy_from_slice(weights)
            }
            SubmodelKind::DecoderRow(d) => {
                self.decoder.row_mut(d as usize).copy_from_slice(weights)
            }
        }
    }
}

/// Autoencoder reconstruction error `sum_n |x_n - f(h(x_n))|^2` over the
/// given rows.
pub fn e_ba(model: &BAModel, data: &Dataset, rows: &[usize]) -> f64 {
    let d = model.dim();
    let mut x = vec![0.0; d];
    let mut recon = vec![0.0; d];
    let mut total = 0.0;
    for &r in rows {
        data.copy_row_into(r, &mut x);
        let code = model.encoder.encode_point(&x);
        model.decoder.decode_u64(code, &mut recon);
        total += sq_dist(&x, &recon);
    }
    total
}

/// The two parts of the penalized objective over the given rows:
/// reconstruction-from-codes `sum_n |x_n - f(z_n)|^2` and the total Hamming
/// mismatch `sum_n ham(z_n, h(x_n))`. Codes are indexed by local position.
pub fn e_q_parts(
    model: &BAModel,
    data: &Dataset,
    rows: &[usize],
    codes: &CodeMatrix,
) -> (f64, u64) {
    debug_assert_eq!(rows.len(), codes.n_points());
    let d = model.dim();
    let l = model.bits();
    let mut x = vec![0.0; d];
    let mut recon = vec![0.0; d];
    let mut recon_err = 0.0;
    let mut mismatch = 0u64;
    for (local, &r) in rows.iter().enumerate() {
        data.copy_row_into(r, &mut x);
        model.decoder.decode_words(codes.code_words(local), &mut recon);
        recon_err += sq_dist(&x, &recon);
        for bit in 0..l {
            if codes.get(local, bit) != model.encoder.encode_bit(bit, &x) {
                mismatch += 1;
            }
        }
    }
    (recon_err, mismatch)
}

/// Penalized objective `E_Q = sum_n |x_n - f(z_n)|^2 + mu * ham(z_n, h(x_n))`.
pub fn e_q(model: &BAModel, data: &Dataset, rows: &[usize], codes: &CodeMatrix, mu: f64) -> f64 {
    let (recon, mismatch) = e_q_parts(model, data, rows, codes);
    recon + mu * mismatch as f64
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn all_rows(n: usize) -> Vec<usize> {
    (0..n).collect()
}
