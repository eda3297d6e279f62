//! Bit-packed linear algebra over GF(2).
//!
//! Bits are packed into `u64` words, little-endian within each word: bit `i`
//! of a vector lives in word `i / 64` at position `i % 64`. Padding bits past
//! the logical length are kept at zero by every operation, so words can be
//! compared, hashed and serialized directly.
//!
//! ```
//! use qecc_lab::gf2::{BitMatrix, BitVector};
//!
//! let m = BitMatrix::from_dense(&[vec![1, 1], vec![0, 1]]);
//! let v = BitVector::from_bits(&[1, 1]);
//! assert_eq!(m.matvec(&v).unwrap().to_bits(), vec![0, 1]);
//! ```

use std::fmt;
use std::io::{Read, Write};

use crate::error::{format_err, invalid, Result};
use crate::wire;

const WORD: usize = 64;

#[inline]
fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD)
}

#[inline]
fn tail_mask(bits: usize) -> u64 {
    match bits % WORD {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

/// A fixed-length vector over GF(2).
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    /// Builds a vector from 0/1 entries; any nonzero byte counts as 1.
    pub fn from_bits(bits: &[u8]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b != 0 {
                v.set(i, true);
            }
        }
        v
    }

    pub fn from_bools(bits: impl IntoIterator<Item = bool>) -> Self {
        let bits: Vec<u8> = bits.into_iter().map(u8::from).collect();
        Self::from_bits(&bits)
    }

    /// Vector of length `len` with ones exactly at `indices`.
    pub fn from_indices(len: usize, indices: &[usize]) -> Self {
        let mut v = Self::zeros(len);
        for &i in indices {
            v.set(i, true);
        }
        v
    }

    /// Rebuilds a vector from packed words, rejecting nonzero padding.
    pub fn from_words(len: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != words_for(len) {
            return Err(invalid(format!(
                "{} words cannot hold exactly {len} bits",
                words.len()
            )));
        }
        if let Some(&last) = words.last() {
            if last & !tail_mask(len) != 0 {
                return Err(invalid("padding bits must be zero"));
            }
        }
        Ok(Self { len, words })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i / WORD] >> (i % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 1u64 << (i % WORD);
        if value {
            self.words[i / WORD] |= mask;
        } else {
            self.words[i / WORD] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / WORD] ^= 1u64 << (i % WORD);
    }

    /// Hamming weight.
    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Parity of the bitwise AND, i.e. the GF(2) inner product.
    pub fn dot(&self, other: &BitVector) -> Result<bool> {
        self.check_len(other)?;
        Ok(dot_words(&self.words, &other.words))
    }

    /// In-place XOR with a vector of the same length.
    pub fn xor_assign(&mut self, other: &BitVector) -> Result<()> {
        self.check_len(other)?;
        xor_words(&mut self.words, &other.words);
        Ok(())
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let tz = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(wi * WORD + tz)
            })
        })
    }

    pub fn to_bits(&self) -> Vec<u8> {
        (0..self.len).map(|i| u8::from(self.get(i))).collect()
    }

    /// Copies bits `[start, start + len)` into a new vector.
    pub fn slice(&self, start: usize, len: usize) -> BitVector {
        assert!(start + len <= self.len, "slice out of range");
        let mut out = BitVector::zeros(len);
        for i in self.iter_ones().filter(|&i| i >= start && i < start + len) {
            out.set(i - start, true);
        }
        out
    }

    /// Concatenation `[self, other]`.
    pub fn concat(&self, other: &BitVector) -> BitVector {
        let mut out = BitVector::zeros(self.len + other.len);
        for i in self.iter_ones() {
            out.set(i, true);
        }
        for i in other.iter_ones() {
            out.set(self.len + i, true);
        }
        out
    }

    fn check_len(&self, other: &BitVector) -> Result<()> {
        if self.len != other.len {
            return Err(invalid(format!(
                "length mismatch: {} vs {}",
                self.len, other.len
            )));
        }
        Ok(())
    }

    pub(crate) fn write_words<W: Write>(&self, w: &mut W) -> Result<()> {
        for &word in &self.words {
            wire::put_u64(w, word)?;
        }
        Ok(())
    }

    pub(crate) fn read_words<R: Read>(r: &mut R, len: usize, what: &'static str) -> Result<Self> {
        let words = (0..words_for(len))
            .map(|_| wire::get_u64(r, what))
            .collect::<Result<Vec<_>>>()?;
        Self::from_words(len, words).map_err(|e| format_err(what, e.to_string()))
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector({self})")
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Elementwise XOR of two equal-length vectors.
pub fn xor_acc(acc: &BitVector, v: &BitVector) -> Result<BitVector> {
    let mut out = acc.clone();
    out.xor_assign(v)?;
    Ok(out)
}

#[inline]
fn dot_words(a: &[u64], b: &[u64]) -> bool {
    let mut acc = 0u64;
    for (x, y) in a.iter().zip(b) {
        acc ^= x & y;
    }
    acc.count_ones() & 1 == 1
}

#[inline]
fn xor_words(dst: &mut [u64], src: &[u64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

/// A dense row-major matrix over GF(2).
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    data: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let stride = words_for(cols);
        Self {
            rows,
            cols,
            stride,
            data: vec![0; rows * stride],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    /// Builds a matrix from 0/1 rows. Panics on ragged input.
    pub fn from_dense(rows: &[Vec<u8>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows.len(), cols);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), cols, "ragged row {i}");
            for (j, &b) in row.iter().enumerate() {
                if b != 0 {
                    m.set(i, j, true);
                }
            }
        }
        m
    }

    pub fn from_rows(cols: usize, rows: &[BitVector]) -> Result<Self> {
        let mut m = Self::zeros(rows.len(), cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(invalid(format!(
                    "row {i} has length {}, expected {cols}",
                    row.len()
                )));
            }
            m.row_words_mut(i).copy_from_slice(row.words());
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        assert!(r < self.rows && c < self.cols, "({r},{c}) out of range");
        (self.data[r * self.stride + c / WORD] >> (c % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        assert!(r < self.rows && c < self.cols, "({r},{c}) out of range");
        let idx = r * self.stride + c / WORD;
        let mask = 1u64 << (c % WORD);
        if value {
            self.data[idx] |= mask;
        } else {
            self.data[idx] &= !mask;
        }
    }

    #[inline]
    pub fn row_words(&self, r: usize) -> &[u64] {
        &self.data[r * self.stride..(r + 1) * self.stride]
    }

    #[inline]
    fn row_words_mut(&mut self, r: usize) -> &mut [u64] {
        &mut self.data[r * self.stride..(r + 1) * self.stride]
    }

    pub fn row(&self, r: usize) -> BitVector {
        BitVector {
            len: self.cols,
            words: self.row_words(r).to_vec(),
        }
    }

    /// Column indices set in row `r`.
    pub fn row_support(&self, r: usize) -> Vec<usize> {
        self.row(r).iter_ones().collect()
    }

    /// Row indices set in column `c`.
    pub fn col_support(&self, c: usize) -> Vec<usize> {
        (0..self.rows).filter(|&r| self.get(r, c)).collect()
    }

    pub fn row_weight(&self, r: usize) -> usize {
        self.row_words(r).iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn col_weight(&self, c: usize) -> usize {
        (0..self.rows).filter(|&r| self.get(r, c)).count()
    }

    /// `M v` over GF(2).
    pub fn matvec(&self, v: &BitVector) -> Result<BitVector> {
        if v.len() != self.cols {
            return Err(invalid(format!(
                "matvec: matrix has {} columns, vector has length {}",
                self.cols,
                v.len()
            )));
        }
        let mut out = BitVector::zeros(self.rows);
        for r in 0..self.rows {
            if dot_words(self.row_words(r), v.words()) {
                out.set(r, true);
            }
        }
        Ok(out)
    }

    /// `A B` over GF(2).
    pub fn matmul(&self, other: &BitMatrix) -> Result<BitMatrix> {
        if self.cols != other.rows {
            return Err(invalid(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = BitMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in self.row(r).iter_ones() {
                let src = other.row_words(k).to_vec();
                xor_words(out.row_words_mut(r), &src);
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> BitMatrix {
        let mut out = BitMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in self.row(r).iter_ones() {
                out.set(c, r, true);
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&w| w == 0)
    }

    /// Rank over GF(2) by Gaussian elimination on a copy.
    pub fn rank(&self) -> usize {
        let mut m = self.clone();
        let mut rank = 0;
        for c in 0..self.cols {
            let (wi, bit) = (c / WORD, 1u64 << (c % WORD));
            let Some(pivot) = (rank..m.rows).find(|&r| m.row_words(r)[wi] & bit != 0) else {
                continue;
            };
            m.swap_rows(rank, pivot);
            let pivot_row = m.row_words(rank).to_vec();
            for r in 0..m.rows {
                if r != rank && m.row_words(r)[wi] & bit != 0 {
                    xor_words(m.row_words_mut(r), &pivot_row);
                }
            }
            rank += 1;
            if rank == m.rows {
                break;
            }
        }
        rank
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for w in 0..self.stride {
            self.data.swap(a * self.stride + w, b * self.stride + w);
        }
    }

    /// Adds row `src` into row `dst`.
    pub fn xor_row_into(&mut self, src: usize, dst: usize) {
        let s = self.row_words(src).to_vec();
        xor_words(self.row_words_mut(dst), &s);
    }

    /// Block-diagonal `[[a, 0], [0, b]]`.
    pub fn block_diag(a: &BitMatrix, b: &BitMatrix) -> BitMatrix {
        let mut out = BitMatrix::zeros(a.rows + b.rows, a.cols + b.cols);
        for r in 0..a.rows {
            for c in a.row(r).iter_ones() {
                out.set(r, c, true);
            }
        }
        for r in 0..b.rows {
            for c in b.row(r).iter_ones() {
                out.set(a.rows + r, a.cols + c, true);
            }
        }
        out
    }

    /// Rows `[start, start + count)` restricted to columns `[col_start, col_start + ncols)`.
    pub fn submatrix(&self, start: usize, count: usize, col_start: usize, ncols: usize) -> BitMatrix {
        assert!(start + count <= self.rows && col_start + ncols <= self.cols);
        let mut out = BitMatrix::zeros(count, ncols);
        for r in 0..count {
            for c in self.row(start + r).iter_ones() {
                if c >= col_start && c < col_start + ncols {
                    out.set(r, c - col_start, true);
                }
            }
        }
        out
    }

    /// Serializes as `GF2M`, u32 rows, u32 cols, then packed rows.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"GF2M")?;
        wire::put_u32(w, u32::try_from(self.rows).map_err(|_| invalid("too many rows"))?)?;
        wire::put_u32(w, u32::try_from(self.cols).map_err(|_| invalid("too many columns"))?)?;
        for &word in &self.data {
            wire::put_u64(w, word)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        const WHAT: &str = "GF2M matrix";
        wire::expect_magic(r, b"GF2M", WHAT)?;
        let rows = wire::get_u32(r, WHAT)? as usize;
        let cols = wire::get_u32(r, WHAT)? as usize;
        let mut m = BitMatrix::zeros(rows, cols);
        let mask = tail_mask(cols);
        for i in 0..rows {
            for j in 0..m.stride {
                let word = wire::get_u64(r, WHAT)?;
                if j + 1 == m.stride && word & !mask != 0 {
                    return Err(format_err(WHAT, format!("row {i} has nonzero padding")));
                }
                m.data[i * m.stride + j] = word;
            }
        }
        Ok(m)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BitMatrix {}x{}", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {}", self.row(r))?;
        }
        Ok(())
    }
}
