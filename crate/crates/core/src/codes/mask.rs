use num_traits::Float;

use crate::gf2::BitMatrix;

/// Additive value used for masked attention scores.
pub const MASKED_SCORE: f64 = -1e9;

/// Symmetric attention mask over `[error coordinates | checks]`.
///
/// Entry `(i, j)` is set (unmasked) when `i == j`, when two error coordinates
/// share a check, when an error coordinate is incident on a check, or when
/// two checks share an error coordinate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    n_err: usize,
    bits: BitMatrix,
}

impl AttentionMask {
    pub fn from_parity_check(h: &BitMatrix) -> Self {
        let (m, n) = (h.rows(), h.cols());
        let size = n + m;
        let mut bits = BitMatrix::zeros(size, size);
        for i in 0..size {
            bits.set(i, i, true);
        }
        for r in 0..m {
            let support = h.row_support(r);
            for &a in &support {
                bits.set(a, n + r, true);
                bits.set(n + r, a, true);
                for &b in &support {
                    bits.set(a, b, true);
                }
            }
        }
        for c in 0..n {
            let rows = h.col_support(c);
            for &a in &rows {
                for &b in &rows {
                    bits.set(n + a, n + b, true);
                }
            }
        }
        Self { n_err: n, bits }
    }

    /// Mask that lets every position attend to every other.
    pub fn unmasked(n_err: usize, n_s: usize) -> Self {
        let size = n_err + n_s;
        let mut bits = BitMatrix::zeros(size, size);
        for i in 0..size {
            for j in 0..size {
                bits.set(i, j, true);
            }
        }
        Self { n_err, bits }
    }

    pub fn size(&self) -> usize {
        self.bits.rows()
    }

    pub fn n_err(&self) -> usize {
        self.n_err
    }

    pub fn bits(&self) -> &BitMatrix {
        &self.bits
    }

    pub fn is_unmasked(&self, i: usize, j: usize) -> bool {
        self.bits.get(i, j)
    }

    pub fn unmasked_fraction(&self) -> f64 {
        let total = (0..self.size()).map(|r| self.bits.row_weight(r)).sum::<usize>();
        total as f64 / (self.size() * self.size()) as f64
    }

    /// Row-major additive mask: `0` where attention is allowed, `-1e9` elsewhere.
    pub fn additive<S: Float>(&self) -> Vec<S> {
        let masked = S::from(MASKED_SCORE).expect("representable");
        let size = self.size();
        let mut out = vec![S::zero(); size * size];
        for i in 0..size {
            for j in 0..size {
                if !self.bits.get(i, j) {
                    out[i * size + j] = masked;
                }
            }
        }
        out
    }
}
