//! Z step: per-point optimization of binary codes against a fixed decoder.
//!
//! For each point the target is
//!
//! ```text
//!   min_z ||x - f(z)||^2 + mu * ham(z, h(x))
//! ```
//!
//! over z in {0,1}^L. Two solvers are provided: exact enumeration for small L
//! and a relaxed-initialization alternating scheme for larger L. Both operate
//! on codes packed into a single `u64` word, so L <= 64 throughout.

use crate::data::CodeMatrix;
use crate::model::{sq_dist, BAModel, Decoder, Shard};

use super::MacError;

/// Largest code width accepted by exact enumeration (2^20 candidates).
pub const ENUMERATE_MAX_BITS: usize = 20;

/// Code widths up to this get a precomputed reconstruction table inside
/// [`z_step`]; larger widths decode candidates on the fly.
const TABLE_MAX_BITS: usize = 16;

/// Strategy for the per-point code update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ZMode {
    /// Exact search over all 2^L codes. Requires L <= [`ENUMERATE_MAX_BITS`].
    Enumerate,
    /// Relaxed least-squares initialization followed by single-bit descent.
    Alternate,
}

/// Outcome of one Z step over a shard.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ZStats {
    /// Points whose stored code changed.
    pub changed: usize,
    /// Total Hamming distance between the final codes and the encoder output,
    /// summed over the shard. Zero together with `changed == 0` means the
    /// coordinates have collapsed onto the encoder (the usual stopping test).
    pub mismatches: u64,
}

/// Objective value of code `z` for point `x`: reconstruction error plus the
/// weighted Hamming penalty against the encoder output `hx`.
fn z_cost(x: &[f64], z: u64, hx: u64, mu: f64, decoder: &Decoder, scratch: &mut [f64]) -> f64 {
    decoder.decode_u64(z, scratch);
    sq_dist(x, scratch) + mu * f64::from((z ^ hx).count_ones())
}

/// Key that orders codes lexicographically as bit tuples (z_1, ..., z_L):
/// bit 0 holds z_1, which must compare most significant, so the packed word
/// is bit-reversed before numeric comparison.
fn lex_key(z: u64, l: usize) -> u64 {
    z.reverse_bits() >> (64 - l)
}

/// True when candidate `(cost, ham, z)` beats the incumbent under the tie
/// order: lower cost, then fewer flipped bits against `hx`, then
/// lexicographically smaller bit tuple.
fn candidate_wins(cand: (f64, u32, u64), best: (f64, u32, u64), l: usize) -> bool {
    if cand.0 != best.0 {
        return cand.0 < best.0;
    }
    if cand.1 != best.1 {
        return cand.1 < best.1;
    }
    lex_key(cand.2, l) < lex_key(best.2, l)
}

/// Exact Z update by enumerating all 2^L codes. Ties are broken by Hamming
/// distance to `hx`, then by lexicographic order on the bit tuple, so the
/// result is unique and independent of enumeration order.
pub fn z_step_enumerate(
    x: &[f64],
    hx: u64,
    decoder: &Decoder,
    mu: f64,
) -> Result<u64, MacError> {
    let l = decoder.code_bits();
    if l > ENUMERATE_MAX_BITS {
        return Err(MacError::TooManyBitsForEnumeration {
            l,
            max: ENUMERATE_MAX_BITS,
        });
    }
    let mut scratch = vec![0.0; decoder.output_dim()];
    let mut best = (
        z_cost(x, 0, hx, mu, decoder, &mut scratch),
        hx.count_ones(),
        0u64,
    );
    for z in 1..(1u64 << l) {
        let cand = (
            z_cost(x, z, hx, mu, decoder, &mut scratch),
            (z ^ hx).count_ones(),
            z,
        );
        if candidate_wins(cand, best, l) {
            best = cand;
        }
    }
    Ok(best.2)
}

/// Factorization of F'F + ridge used to warm-start the alternating solver.
/// Built once per decoder and reused across all points of a shard.
pub(crate) struct RelaxedSolver {
    l: usize,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl RelaxedSolver {
    /// Ridge added to F'F. Keeps the system solvable when decoder columns are
    /// dependent (duplicate or dead bits); the relaxed solution only seeds a
    /// local search, so the bias this introduces is harmless.
    const RIDGE: f64 = 1e-8;

    pub(crate) fn new(decoder: &Decoder) -> Self {
        let l = decoder.code_bits();
        let d = decoder.output_dim();
        let mut gram = nalgebra::DMatrix::<f64>::zeros(l, l);
        for i in 0..l {
            for j in i..l {
                let mut s = 0.0;
                for r in 0..d {
                    let row = decoder.row(r);
                    s += row[i] * row[j];
                }
                gram[(i, j)] = s;
                gram[(j, i)] = s;
            }
        }
        let mut ridge = Self::RIDGE;
        loop {
            let mut m = gram.clone();
            for i in 0..l {
                m[(i, i)] += ridge;
            }
            if let Some(chol) = nalgebra::Cholesky::new(m) {
                return Self { l, chol };
            }
            // Escalate until the factorization goes through; gram is PSD so a
            // large enough ridge always succeeds.
            ridge *= 100.0;
        }
    }

    /// Solve the relaxed problem min ||x - F z - b||^2 over real z, clip to
    /// [0, 1], and round at 0.5.
    pub(crate) fn solve(&self, x: &[f64], decoder: &Decoder) -> u64 {
        let d = decoder.output_dim();
        let mut rhs = nalgebra::DVector::<f64>::zeros(self.l);
        for i in 0..self.l {
            let mut s = 0.0;
            for r in 0..d {
                let row = decoder.row(r);
                s += row[i] * (x[r] - row[self.l]);
            }
            rhs[i] = s;
        }
        let sol = self.chol.solve(&rhs);
        let mut z = 0u64;
        for i in 0..self.l {
            let v = sol[i].clamp(0.0, 1.0);
            if v >= 0.5 {
                z |= 1 << i;
            }
        }
        z
    }
}

/// Relaxed initialization for a single point: exposed for tests and for
/// callers that want the warm start alone.
pub fn z_step_relaxed_init(x: &[f64], decoder: &Decoder) -> u64 {
    RelaxedSolver::new(decoder).solve(x, decoder)
}

/// Alternating single-bit descent from `z0`. Sweeps bits in ascending order
/// and accepts only strict cost decreases, so every accepted flip lowers the
/// objective and the loop terminates. The reconstruction is updated
/// incrementally (one column add/subtract per flip).
pub fn z_step_alternate(x: &[f64], hx: u64, decoder: &Decoder, mu: f64, z0: u64) -> u64 {
    let l = decoder.code_bits();
    let d = decoder.output_dim();
    let mut z = z0;
    let mut recon = vec![0.0; d];
    decoder.decode_u64(z, &mut recon);
    let mut cost = sq_dist(x, &recon) + mu * f64::from((z ^ hx).count_ones());
    // Strictly decreasing costs cannot cycle; the cap is a safety valve only.
    for _ in 0..1000 {
        let mut improved = false;
        for bit in 0..l {
            let sign = if z & (1 << bit) == 0 { 1.0 } else { -1.0 };
            let mut trial = 0.0;
            for r in 0..d {
                let v = recon[r] + sign * decoder.row(r)[bit];
                let diff = x[r] - v;
                trial += diff * diff;
            }
            let flipped = z ^ (1 << bit);
            trial += mu * f64::from((flipped ^ hx).count_ones());
            if trial < cost {
                for r in 0..d {
                    recon[r] += sign * decoder.row(r)[bit];
                }
                z = flipped;
                cost = trial;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    z
}

/// Reconstruction source for candidate costs inside [`z_step`]: a dense table
/// of all 2^L decodes when L is small, direct decoding otherwise. Table
/// entries are produced by the same `decode_u64` routine as the direct path,
/// so costs are bitwise identical either way.
enum ReconSource {
    Table { d: usize, entries: Vec<f64> },
    Direct,
}

impl ReconSource {
    fn build(decoder: &Decoder, mode: ZMode) -> Self {
        let l = decoder.code_bits();
        if mode == ZMode::Enumerate && l <= TABLE_MAX_BITS {
            let d = decoder.output_dim();
            let count = 1usize << l;
            let mut entries = vec![0.0; count * d];
            for z in 0..count {
                let row = &mut entries[z * d..(z + 1) * d];
                decoder.decode_u64(z as u64, row);
            }
            ReconSource::Table { d, entries }
        } else {
            ReconSource::Direct
        }
    }

    fn cost(
        &self,
        x: &[f64],
        z: u64,
        hx: u64,
        mu: f64,
        decoder: &Decoder,
        scratch: &mut [f64],
    ) -> f64 {
        match self {
            ReconSource::Table { d, entries } => {
                let row = &entries[z as usize * d..(z as usize + 1) * d];
                sq_dist(x, row) + mu * f64::from((z ^ hx).count_ones())
            }
            ReconSource::Direct => z_cost(x, z, hx, mu, decoder, scratch),
        }
    }
}

/// One Z step over a shard: updates `codes` in place and reports how many
/// codes changed plus the total disagreement with the encoder. Codes are
/// indexed by local shard position, matching `e_q_parts` and
/// `train_submodel`. A point keeps its previous code unless the candidate is
/// strictly cheaper, which makes the step nonincreasing in the
/// quadratic-penalty objective regardless of solver quality.
pub fn z_step(
    model: &BAModel,
    shard: &Shard<'_>,
    codes: &mut CodeMatrix,
    mu: f64,
    mode: ZMode,
) -> Result<ZStats, MacError> {
    let l = model.bits();
    let d = model.dim();
    if mode == ZMode::Enumerate && l > ENUMERATE_MAX_BITS {
        return Err(MacError::TooManyBitsForEnumeration {
            l,
            max: ENUMERATE_MAX_BITS,
        });
    }
    let source = ReconSource::build(&model.decoder, mode);
    let relaxed = match mode {
        ZMode::Alternate => Some(RelaxedSolver::new(&model.decoder)),
        ZMode::Enumerate => None,
    };
    debug_assert_eq!(shard.len(), codes.n_points());
    let mut x = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let mut stats = ZStats::default();
    for local in 0..shard.len() {
        shard.copy_point(local, &mut x);
        let hx = model.encoder.encode_point(&x);
        let prev = codes.code_u64(local);
        let cand = match mode {
            ZMode::Enumerate => {
                let mut best = (
                    source.cost(&x, 0, hx, mu, &model.decoder, &mut scratch),
                    hx.count_ones(),
                    0u64,
                );
                for z in 1..(1u64 << l) {
                    let c = (
                        source.cost(&x, z, hx, mu, &model.decoder, &mut scratch),
                        (z ^ hx).count_ones(),
                        z,
                    );
                    if candidate_wins(c, best, l) {
                        best = c;
                    }
                }
                best.2
            }
            ZMode::Alternate => {
                let z0 = relaxed.as_ref().unwrap().solve(&x, &model.decoder);
                z_step_alternate(&x, hx, &model.decoder, mu, z0)
            }
        };
        let final_z = if cand == prev {
            prev
        } else {
            let prev_cost = source.cost(&x, prev, hx, mu, &model.decoder, &mut scratch);
            let cand_cost = source.cost(&x, cand, hx, mu, &model.decoder, &mut scratch);
            if cand_cost < prev_cost {
                codes.set_code_u64(local, cand);
                stats.changed += 1;
                cand
            } else {
                prev
            }
        };
        stats.mismatches += u64::from((final_z ^ hx).count_ones());
    }
    Ok(stats)
}
