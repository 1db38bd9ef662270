//! Datasets, binary code storage, shard partitioning and feature transforms.
//!
//! A [`Dataset`] holds `n` points of dimension `dim` in row-major order,
//! either as `f64` or as raw bytes. Byte storage keeps large corpora compact
//! (SIFT descriptors, quantized kernel features); values are widened to `f64`
//! one row at a time at the point of use, never wholesale.

mod io;
mod partition;
mod pca;
mod rbf;
mod synthetic;

pub use io::{read_bvecs, read_fvecs, write_bvecs, write_fvecs};
pub use partition::{partition, Partition};
pub use pca::{pca_init, PcaInit};
pub use rbf::{pick_rbf_centers, rbf_featurize, rbf_features, KernelConfig};
pub use synthetic::{generate_synthetic, synthetic_mixture, Mixture};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record at byte {offset}: {detail}")]
    MalformedRecord { offset: u64, detail: String },
    #[error("inconsistent dimension in record {record}: expected {expected}, got {got}")]
    InconsistentDim {
        record: usize,
        expected: usize,
        got: usize,
    },
    #[error("shard for machine {machine} would be empty (n={n}, machines={machines})")]
    EmptyShard {
        machine: usize,
        n: usize,
        machines: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Row-major point storage. Byte values decode as `value * scale`; SIFT-style
/// descriptors use scale 1 while quantized kernel features use 1/255.
#[derive(Debug, Clone, PartialEq)]
pub enum Storage {
    Real64(Vec<f64>),
    Byte { data: Vec<u8>, scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    dim: usize,
    storage: Storage,
}

impl Dataset {
    pub fn from_real(n: usize, dim: usize, values: Vec<f64>) -> Result<Self, DataError> {
        if values.len() != n * dim {
            return Err(DataError::InvalidArgument(format!(
                "expected {} values for {}x{}, got {}",
                n * dim,
                n,
                dim,
                values.len()
            )));
        }
        Ok(Dataset {
            n,
            dim,
            storage: Storage::Real64(values),
        })
    }

    pub fn from_bytes(n: usize, dim: usize, data: Vec<u8>, scale: f64) -> Result<Self, DataError> {
        if data.len() != n * dim {
            return Err(DataError::InvalidArgument(format!(
                "expected {} bytes for {}x{}, got {}",
                n * dim,
                n,
                dim,
                data.len()
            )));
        }
        Ok(Dataset {
            n,
            dim,
            storage: Storage::Byte { data, scale },
        })
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_byte(&self) -> bool {
        matches!(self.storage, Storage::Byte { .. })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.n && j < self.dim);
        match &self.storage {
            Storage::Real64(v) => v[i * self.dim + j],
            Storage::Byte { data, scale } => f64::from(data[i * self.dim + j]) * scale,
        }
    }

    /// Widens one row into a caller-provided buffer. This is the only byte ->
    /// f64 conversion path, so byte datasets are never expanded wholesale.
    pub fn copy_row_into(&self, i: usize, buf: &mut [f64]) {
        debug_assert!(i < self.n);
        debug_assert_eq!(buf.len(), self.dim);
        match &self.storage {
            Storage::Real64(v) => buf.copy_from_slice(&v[i * self.dim..(i + 1) * self.dim]),
            Storage::Byte { data, scale } => {
                let row = &data[i * self.dim..(i + 1) * self.dim];
                for (dst, &b) in buf.iter_mut().zip(row) {
                    *dst = f64::from(b) * scale;
                }
            }
        }
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        let mut buf = vec![0.0; self.dim];
        self.copy_row_into(i, &mut buf);
        buf
    }

    /// Materializes the given rows as a new dataset (storage kind preserved).
    pub fn select(&self, indices: &[usize]) -> Dataset {
        match &self.storage {
            Storage::Real64(v) => {
                let mut out = Vec::with_capacity(indices.len() * self.dim);
                for &i in indices {
                    out.extend_from_slice(&v[i * self.dim..(i + 1) * self.dim]);
                }
                Dataset {
                    n: indices.len(),
                    dim: self.dim,
                    storage: Storage::Real64(out),
                }
            }
            Storage::Byte { data, scale } => {
                let mut out = Vec::with_capacity(indices.len() * self.dim);
                for &i in indices {
                    out.extend_from_slice(&data[i * self.dim..(i + 1) * self.dim]);
                }
                Dataset {
                    n: indices.len(),
                    dim: self.dim,
                    storage: Storage::Byte {
                        data: out,
                        scale: *scale,
                    },
                }
            }
        }
    }

    /// Deterministic holdout split: a seeded shuffle picks the holdout rows,
    /// then both halves keep their original relative order.
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> (Dataset, Dataset) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        assert!((0.0..1.0).contains(&fraction), "fraction must be in [0,1)");
        let mut idx: Vec<usize> = (0..self.n).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let hold = ((self.n as f64 * fraction).round() as usize).min(self.n.saturating_sub(1));
        let mut held: Vec<usize> = idx[..hold].to_vec();
        let mut kept: Vec<usize> = idx[hold..].to_vec();
        held.sort_unstable();
        kept.sort_unstable();
        (self.select(&kept), self.select(&held))
    }
}

/// Packed binary codes, one `L`-bit code per point, little-endian within
/// 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    n: usize,
    bits: usize,
    words_per_code: usize,
    data: Vec<u64>,
}

impl CodeMatrix {
    pub fn zeros(n: usize, bits: usize) -> Self {
        assert!(bits >= 1, "codes need at least one bit");
        let words_per_code = bits.div_ceil(64);
        CodeMatrix {
            n,
            bits,
            words_per_code,
            data: vec![0; n * words_per_code],
        }
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn get(&self, i: usize, bit: usize) -> bool {
        debug_assert!(i < self.n && bit < self.bits);
        let w = self.data[i * self.words_per_code + bit / 64];
        (w >> (bit % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, bit: usize, value: bool) {
        debug_assert!(i < self.n && bit < self.bits);
        let w = &mut self.data[i * self.words_per_code + bit / 64];
        if value {
            *w |= 1 << (bit % 64);
        } else {
            *w &= !(1 << (bit % 64));
        }
    }

    pub fn code_words(&self, i: usize) -> &[u64] {
        &self.data[i * self.words_per_code..(i + 1) * self.words_per_code]
    }

    /// The whole code as one word; only valid for `bits <= 64`.
    pub fn code_u64(&self, i: usize) -> u64 {
        debug_assert!(self.bits <= 64);
        self.data[i * self.words_per_code]
    }

    pub fn set_code_u64(&mut self, i: usize, code: u64) {
        debug_assert!(self.bits <= 64);
        debug_assert!(self.bits == 64 || code < (1u64 << self.bits));
        self.data[i * self.words_per_code] = code;
    }

    pub fn hamming(&self, i: usize, other: &CodeMatrix, j: usize) -> u32 {
        debug_assert_eq!(self.bits, other.bits);
        self.code_words(i)
            .iter()
            .zip(other.code_words(j))
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}

/// Hamming distance between two packed codes of equal width.
pub fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}
