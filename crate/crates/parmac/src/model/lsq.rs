//! Closed-form decoder fit by normal equations.

use nalgebra::{Cholesky, DMatrix};

use crate::data::{CodeMatrix, Dataset};

use super::{Decoder, ModelError};

/// Solves `min_F sum_n |x_n - F [z_n; 1]|^2` exactly: one Gram assembly over
/// the codes shared by all `D` output rows, Cholesky solve per right-hand
/// side. If the Gram matrix is singular (a constant or duplicated bit), a
/// ridge of 1e-8 on the diagonal is added once.
pub fn fit_decoder_lsq(data: &Dataset, codes: &CodeMatrix) -> Result<Decoder, ModelError> {
    let n = data.n_points();
    if codes.n_points() != n {
        return Err(ModelError::ShapeMismatch(format!(
            "codes cover {} points, dataset has {}",
            codes.n_points(),
            n
        )));
    }
    if n == 0 {
        return Err(ModelError::ShapeMismatch("empty dataset".into()));
    }
    let l = codes.bits();
    let d = data.dim();
    let m = l + 1; // code bits plus bias

    // Gram = Z~' Z~ where Z~ = [z; 1]. Entries are bit co-occurrence counts.
    let mut gram = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DMatrix::<f64>::zeros(m, d);
    let mut x = vec![0.0; d];
    let mut set_bits: Vec<usize> = Vec::with_capacity(l);
    for i in 0..n {
        set_bits.clear();
        for (word_idx, &word) in codes.code_words(i).iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                set_bits.push(word_idx * 64 + b);
                bits &= bits - 1;
            }
        }
        for (a_pos, &a) in set_bits.iter().enumerate() {
            for &b in &set_bits[a_pos..] {
                gram[(a, b)] += 1.0;
            }
            gram[(a, l)] += 1.0;
        }
        gram[(l, l)] += 1.0;
        data.copy_row_into(i, &mut x);
        for (j, &v) in x.iter().enumerate() {
            for &a in &set_bits {
                rhs[(a, j)] += v;
            }
            rhs[(l, j)] += v;
        }
    }
    for a in 0..m {
        for b in a + 1..m {
            gram[(b, a)] = gram[(a, b)];
        }
    }

    let chol = match Cholesky::new(gram.clone()) {
        Some(c) => c,
        None => {
            let mut ridged = gram;
            for i in 0..m {
                ridged[(i, i)] += 1e-8;
            }
            Cholesky::new(ridged).ok_or(ModelError::IllConditioned)?
        }
    };
    let solution = chol.solve(&rhs); // m x d, column j = weights for output j

    let mut decoder = Decoder::zeros(d, l);
    for j in 0..d {
        let row = decoder.row_mut(j);
        for a in 0..l {
            row[a] = solution[(a, j)];
        }
        row[l] = solution[(l, j)];
    }
    Ok(decoder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_mixture;
    use crate::model::all_rows;

    // Independent oracle: explicit dense Gram assembly and Gauss-Jordan
    // elimination with partial pivoting.
    fn oracle_lsq(data: &Dataset, codes: &CodeMatrix) -> Vec<Vec<f64>> {
        let n = data.n_points();
        let l = codes.bits();
        let d = data.dim();
        let m = l + 1;
        let feat = |i: usize, a: usize| -> f64 {
            if a == l {
                1.0
            } else if codes.get(i, a) {
                1.0
            } else {
                0.0
            }
        };
        let mut aug = vec![vec![0.0; m + d]; m];
        for i in 0..n {
            for r in 0..m {
                let fr = feat(i, r);
                if fr == 0.0 {
                    continue;
                }
                for c in 0..m {
                    aug[r][c] += fr * feat(i, c);
                }
                for j in 0..d {
                    aug[r][m + j] += fr * data.get(i, j);
                }
            }
        }
        for col in 0..m {
            let piv = (col..m)
                .max_by(|&a, &b| aug[a][col].abs().partial_cmp(&aug[b][col].abs()).unwrap())
                .unwrap();
            aug.swap(col, piv);
            let pval = aug[col][col];
            assert!(pval.abs() > 1e-12, "oracle hit a singular system");
            for c in col..m + d {
                aug[col][c] /= pval;
            }
            for r in 0..m {
                if r != col && aug[r][col] != 0.0 {
                    let f = aug[r][col];
                    for c in col..m + d {
                        aug[r][c] -= f * aug[col][c];
                    }
                }
            }
        }
        // rows of the answer: per output dim j, weights [w_0..w_{l-1}, bias]
        (0..d)
            .map(|j| (0..m).map(|a| aug[a][m + j]).collect())
            .collect()
    }

    #[test]
    fn matches_independent_normal_equations_solver() {
        let (data, _) = synthetic_mixture(250, 4, 3, 7).unwrap();
        let mut codes = CodeMatrix::zeros(250, 5);
        for i in 0..250 {
            codes.set_code_u64(i, ((i * 7 + 3) % 32) as u64);
        }
        let dec = fit_decoder_lsq(&data, &codes).unwrap();
        let oracle = oracle_lsq(&data, &codes);
        for j in 0..4 {
            for a in 0..6 {
                assert!(
                    (dec.row(j)[a] - oracle[j][a]).abs() < 1e-8,
                    "dim {j} weight {a}: {} vs {}",
                    dec.row(j)[a],
                    oracle[j][a]
                );
            }
        }
    }

    #[test]
    fn solution_is_a_local_minimum() {
        let (data, _) = synthetic_mixture(120, 3, 2, 15).unwrap();
        let mut codes = CodeMatrix::zeros(120, 4);
        for i in 0..120 {
            codes.set_code_u64(i, ((i * 5 + 1) % 16) as u64);
        }
        let dec = fit_decoder_lsq(&data, &codes).unwrap();
        let rows = all_rows(120);
        let sse = |dec: &Decoder| {
            let mut out = vec![0.0; 3];
            let mut total = 0.0;
            for (local, &r) in rows.iter().enumerate() {
                dec.decode_words(codes.code_words(local), &mut out);
                for j in 0..3 {
                    let diff = out[j] - data.get(r, j);
                    total += diff * diff;
                }
            }
            total
        };
        let base = sse(&dec);
        for perturb_idx in 0..8 {
            let mut other = dec.clone();
            let dim = perturb_idx % 3;
            let wi = perturb_idx % 5;
            other.row_mut(dim)[wi] += if perturb_idx % 2 == 0 { 1e-3 } else { -1e-3 };
            assert!(sse(&other) >= base - 1e-9);
        }
    }

    #[test]
    fn constant_bit_takes_ridge_fallback() {
        // Bit 1 is always zero: the Gram matrix is singular but the fit must
        // still succeed and reconstruct well.
        let (data, _) = synthetic_mixture(60, 2, 2, 3).unwrap();
        let mut codes = CodeMatrix::zeros(60, 2);
        for i in 0..60 {
            codes.set(i, 0, i % 2 == 0);
        }
        let dec = fit_decoder_lsq(&data, &codes).unwrap();
        assert!(dec.weights().iter().all(|w| w.is_finite()));
    }

    #[test]
    fn reproduces_exactly_representable_targets() {
        // Targets generated by a known linear map of the codes: SSE must be
        // (numerically) zero and weights recovered.
        let mut codes = CodeMatrix::zeros(40, 3);
        for i in 0..40 {
            codes.set_code_u64(i, (i % 8) as u64);
        }
        let truth = [[2.0, -1.0, 0.5, 3.0], [0.0, 4.0, -2.0, -1.0]];
        let mut values = Vec::new();
        for i in 0..40 {
            for t in &truth {
                let mut v = t[3];
                for b in 0..3 {
                    if codes.get(i, b) {
                        v += t[b];
                    }
                }
                values.push(v);
            }
        }
        let data = Dataset::from_real(40, 2, values).unwrap();
        let dec = fit_decoder_lsq(&data, &codes).unwrap();
        for j in 0..2 {
            for a in 0..4 {
                assert!((dec.row(j)[a] - truth[j][a]).abs() < 1e-9);
            }
        }
    }
}
