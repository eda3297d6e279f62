//! Reverse-mode differentiation over a recorded list of operations.

use super::params::ParamStore;
use super::tensor::{gemm, Scalar, Tensor};
use crate::codes::MASKED_SCORE;
use crate::error::{invalid, Error, Result};
use crate::gf2::BitMatrix;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
/// Distance from 0 and 1 at which probabilities are clamped inside BCE.
pub const BCE_CLAMP: f64 = 1e-7;

enum Op<S> {
    Leaf,
    Param(usize),
    Linear { x: usize, w: usize, b: Option<usize> },
    Add(usize, usize),
    Mul(usize, usize),
    Affine { x: usize, a: S },
    Sigmoid(usize),
    Gelu(usize),
    LayerNorm { x: usize, g: usize, b: usize, xhat: Vec<S>, rstd: Vec<S> },
    Softmax(usize),
    Bmm { a: usize, b: usize, alpha: S, nt: bool },
    Permute { x: usize, axes: Vec<usize> },
    Reshape(usize),
    MeanAxis { x: usize, axis: usize },
    ProdLast(usize),
    Bipolar { x: usize, support: Vec<Vec<usize>> },
    BceLogits { z: usize, t: Vec<S> },
    BceProb { p: usize, t: Vec<S> },
    ConcatLast { a: usize, b: usize },
    EmbedScale { h: usize, w: usize },
    Ste(usize),
    Sum(usize),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// A single-threaded computation graph.
///
/// ```
/// use qecc_lab::autodiff::{Tape, Tensor};
///
/// let mut tape = Tape::<f64>::new();
/// let w = tape.leaf(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
/// let sq = tape.mul(w, w).unwrap();
/// let loss = tape.sum(sq);
/// let grads = tape.gradients(loss).unwrap();
/// assert_eq!(grads.get(w).unwrap().data(), &[2.0, 4.0]);
/// ```
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    invalid(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

const GELU_C: f64 = 0.044_715;

#[inline]
fn gelu<S: Scalar>(x: S) -> S {
    x * gelu_gate(x)
}

/// `(1 + tanh(u)) / 2` for the GELU argument `u`, written as a logistic so a
/// single `exp` suffices.
#[inline]
fn gelu_gate<S: Scalar>(x: S) -> S {
    let k = S::of((2.0 / std::f64::consts::PI).sqrt());
    let u = k * (x + S::of(GELU_C) * x * x * x);
    S::one() / (S::one() + (-(u + u)).exp())
}

#[inline]
fn gelu_grad<S: Scalar>(x: S) -> S {
    let k = S::of((2.0 / std::f64::consts::PI).sqrt());
    let s = gelu_gate(x);
    // 1 - tanh² = 4 s (1 - s)
    s + x * S::of(2.0) * s * (S::one() - s) * k * (S::one() + S::of(3.0 * GELU_C) * x * x)
}

fn permuted_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    axes.iter().map(|&a| shape[a]).collect()
}

/// Copies `data` laid out as `shape` into the axis order `axes`.
fn permute_data<S: Scalar>(data: &[S], shape: &[usize], axes: &[usize]) -> Vec<S> {
    // Trailing axes left in place move together as contiguous blocks.
    let mut keep = shape.len();
    while keep > 0 && axes[keep - 1] == keep - 1 {
        keep -= 1;
    }
    let block: usize = shape[keep..].iter().product();
    let (shape, axes) = (&shape[..keep], &axes[..keep]);
    let rank = shape.len();
    let mut strides = vec![block; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape = permuted_shape(shape, axes);
    let out_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    if data.is_empty() {
        return out;
    }
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() / block.max(1) {
        out.extend_from_slice(&data[offset..offset + block]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += out_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= out_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// An input that receives a gradient.
    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// An input without a gradient.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records the current value of a stored parameter.
    pub fn param(&mut self, store: &ParamStore<S>, id: super::ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id.0), true)
    }

    /// `x · w (+ b)` over the last axis of `x`; `w` is `[k, n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.last() != Some(&ws[0]) {
            return Err(shape_err("linear", &xs, &ws));
        }
        let (k, n) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [n] {
                return Err(shape_err("linear bias", &ws, self.shape(b)));
            }
        }
        let rows = self.value(x).numel() / k.max(1);
        let mut out = vec![S::zero(); rows * n];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for r in 0..rows {
                out[r * n..(r + 1) * n].copy_from_slice(bias);
            }
        }
        let beta = if b.is_some() { S::one() } else { S::zero() };
        gemm(
            false,
            false,
            rows,
            k,
            n,
            S::one(),
            self.value(x).data(),
            self.value(w).data(),
            beta,
            &mut out,
        );
        let mut shape = xs;
        *shape.last_mut().expect("rank >= 1") = n;
        let needs = self.needs(x.0) || self.needs(w.0) || b.is_some_and(|b| self.needs(b.0));
        Ok(self.push(
            Tensor::from_vec(&shape, out)?,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
            },
            needs,
        ))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::from_vec(self.shape(a), data)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(t, Op::Add(a.0, b.0), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::from_vec(self.shape(a), data)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(t, Op::Mul(a.0, b.0), needs))
    }

    /// `a * x + b` elementwise with scalar `a`, `b`.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        let (sa, sb) = (S::of(a), S::of(b));
        let data = self.value(x).data().iter().map(|&v| sa * v + sb).collect();
        let t = Tensor::from_vec(self.shape(x), data).expect("same numel");
        let needs = self.needs(x.0);
        self.push(t, Op::Affine { x: x.0, a: sa }, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| sigmoid(v)).collect();
        let t = Tensor::from_vec(self.shape(x), data).expect("same numel");
        let needs = self.needs(x.0);
        self.push(t, Op::Sigmoid(x.0), needs)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| gelu(v)).collect();
        let t = Tensor::from_vec(self.shape(x), data).expect("same numel");
        let needs = self.needs(x.0);
        self.push(t, Op::Gelu(x.0), needs)
    }

    /// Normalises the last axis, then scales by `g` and shifts by `b`.
    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(g) != [d] || self.shape(b) != [d] {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(g)));
        }
        let xv = self.value(x).data();
        let gv = self.value(g).data();
        let bv = self.value(b).data();
        let rows = xv.len() / d.max(1);
        let mut out = vec![S::zero(); xv.len()];
        let mut xhat = vec![S::zero(); xv.len()];
        let mut rstd = vec![S::zero(); rows];
        let inv_d = S::one() / S::of(d as f64);
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<S>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_d;
            let rs = S::one() / (var + S::of(LN_EPS)).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        let t = Tensor::from_vec(self.shape(x), out)?;
        let needs = self.needs(x.0) || self.needs(g.0) || self.needs(b.0);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x: x.0,
                g: g.0,
                b: b.0,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    /// Softmax over the last axis of `x + mask`.
    ///
    /// `mask` holds additive scores for the trailing `[rows, cols]` block of
    /// `x` and is repeated over the leading axes. Entries near `-1e9` receive
    /// probability exactly zero.
    pub fn masked_softmax(&mut self, x: Var, mask: Option<&[S]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let m = *shape.last().ok_or_else(|| invalid("softmax of a scalar"))?;
        let xv = self.value(x).data();
        let rows = xv.len() / m.max(1);
        let block_rows = if shape.len() >= 2 { shape[shape.len() - 2] } else { 1 };
        if let Some(mask) = mask {
            if mask.len() != block_rows * m {
                return Err(invalid(format!(
                    "mask has {} entries, scores end in [{block_rows}, {m}]",
                    mask.len()
                )));
            }
        }
        // Masked entries would underflow to exactly zero; skipping them gives
        // the same result faster. A row with nothing unmasked falls back to a
        // plain softmax.
        let cutoff = S::of(MASKED_SCORE / 2.0);
        let kept: Vec<Vec<usize>> = (0..block_rows)
            .map(|br| match mask {
                Some(mask) => {
                    let cols: Vec<usize> = (0..m).filter(|&j| mask[br * m + j] > cutoff).collect();
                    if cols.is_empty() {
                        (0..m).collect()
                    } else {
                        cols
                    }
                }
                None => (0..m).collect(),
            })
            .collect();
        let mut out = vec![S::zero(); xv.len()];
        for r in 0..rows {
            let br = r % block_rows;
            let row = &xv[r * m..(r + 1) * m];
            let dst = &mut out[r * m..(r + 1) * m];
            let cols = &kept[br];
            let add = |j: usize| row[j] + mask.map_or(S::zero(), |mask| mask[br * m + j]);
            let max = cols.iter().map(|&j| add(j)).fold(S::neg_infinity(), S::max);
            let mut sum = S::zero();
            for &j in cols {
                let e = (add(j) - max).exp();
                dst[j] = e;
                sum = sum + e;
            }
            let inv = S::one() / sum;
            for &j in cols {
                dst[j] = dst[j] * inv;
            }
        }
        let t = Tensor::from_vec(&shape, out)?;
        let needs = self.needs(x.0);
        Ok(self.push(t, Op::Softmax(x.0), needs))
    }

    fn bmm_impl(&mut self, a: Var, b: Var, alpha: f64, nt: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let ok = sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && if nt { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(shape_err(if nt { "bmm_nt" } else { "bmm" }, &sa, &sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if nt { sb[1] } else { sb[2] };
        let alpha = S::of(alpha);
        let mut out = vec![S::zero(); batch * m * n];
        let av = self.value(a).data();
        let bv = self.value(b).data();
        for i in 0..batch {
            gemm(
                false,
                nt,
                m,
                k,
                n,
                alpha,
                &av[i * m * k..],
                &bv[i * k * n..],
                S::zero(),
                &mut out[i * m * n..],
            );
        }
        let t = Tensor::from_vec(&[batch, m, n], out)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(t, Op::Bmm { a: a.0, b: b.0, alpha, nt }, needs))
    }

    /// Batched `alpha · a · b` for `a: [B, m, k]`, `b: [B, k, n]`.
    pub fn bmm(&mut self, a: Var, b: Var, alpha: f64) -> Result<Var> {
        self.bmm_impl(a, b, alpha, false)
    }

    /// Batched `alpha · a · bᵀ` for `a: [B, m, k]`, `b: [B, n, k]`.
    pub fn bmm_nt(&mut self, a: Var, b: Var, alpha: f64) -> Result<Var> {
        self.bmm_impl(a, b, alpha, true)
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(invalid(format!("permute: {axes:?} is not a permutation of rank {}", shape.len())));
        }
        let data = permute_data(self.value(x).data(), &shape, axes);
        let t = Tensor::from_vec(&permuted_shape(&shape, axes), data)?;
        let needs = self.needs(x.0);
        Ok(self.push(
            t,
            Op::Permute {
                x: x.0,
                axes: axes.to_vec(),
            },
            needs,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let needs = self.needs(x.0);
        Ok(self.push(t, Op::Reshape(x.0), needs))
    }

    /// Mean over one axis, which is removed.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(invalid(format!("mean_axis: axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(x).data();
        let mut out = vec![S::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for l in 0..len {
                let src = &xv[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + s;
                }
            }
        }
        let inv = S::one() / S::of(len as f64);
        out.iter_mut().for_each(|v| *v = *v * inv);
        let mut new_shape = shape;
        new_shape.remove(axis);
        let t = Tensor::from_vec(&new_shape, out)?;
        let needs = self.needs(x.0);
        Ok(self.push(t, Op::MeanAxis { x: x.0, axis }, needs))
    }

    /// Product over the last axis, which is removed.
    pub fn prod_last(&mut self, x: Var) -> Result<Var> {
        let mut shape = self.shape(x).to_vec();
        let m = shape.pop().ok_or_else(|| invalid("prod_last of a scalar"))?;
        let out = self
            .value(x)
            .data()
            .chunks(m.max(1))
            .map(|row| row.iter().fold(S::one(), |acc, &v| acc * v))
            .collect();
        let t = Tensor::from_vec(&shape, out)?;
        let needs = self.needs(x.0);
        Ok(self.push(t, Op::ProdLast(x.0), needs))
    }

    /// Bipolar factors of the XOR relaxation: for `x: [B, n]` and a `k x n`
    /// binary matrix, returns `[B, k, n]` with `1 - 2 x_j` where the matrix
    /// has a one and exactly `1` elsewhere.
    pub fn bipolar_factors(&mut self, x: Var, m: &BitMatrix) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = m.cols();
        if shape.len() != 2 || shape[1] != n {
            return Err(shape_err("bipolar_factors", &shape, &[m.rows(), n]));
        }
        let (batch, k) = (shape[0], m.rows());
        let support: Vec<Vec<usize>> = (0..k).map(|i| m.row_support(i)).collect();
        let xv = self.value(x).data();
        let mut out = vec![S::one(); batch * k * n];
        let two = S::of(2.0);
        for bi in 0..batch {
            for (i, sup) in support.iter().enumerate() {
                for &j in sup {
                    out[(bi * k + i) * n + j] = S::one() - two * xv[bi * n + j];
                }
            }
        }
        let t = Tensor::from_vec(&[batch, k, n], out)?;
        let needs = self.needs(x.0);
        Ok(self.push(t, Op::Bipolar { x: x.0, support }, needs))
    }

    fn targets(&self, op: &str, x: Var, t: &[S]) -> Result<Vec<S>> {
        if t.len() != self.value(x).numel() {
            return Err(invalid(format!(
                "{op}: {} targets for {} predictions",
                t.len(),
                self.value(x).numel()
            )));
        }
        Ok(t.to_vec())
    }

    /// Mean binary cross-entropy of logits `z` against targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, z: Var, targets: &[S]) -> Result<Var> {
        let t = self.targets("bce_with_logits", z, targets)?;
        let zv = self.value(z).data();
        let n = zv.len().max(1);
        let total: S = zv
            .iter()
            .zip(&t)
            .map(|(&z, &y)| z.max(S::zero()) - z * y + (S::one() + (-z.abs()).exp()).ln())
            .sum();
        let loss = total / S::of(n as f64);
        let needs = self.needs(z.0);
        Ok(self.push(Tensor::scalar(loss), Op::BceLogits { z: z.0, t }, needs))
    }

    /// Mean binary cross-entropy of probabilities `p`, clamped to
    /// `[1e-7, 1 - 1e-7]`. The gradient is taken at the clamped point.
    pub fn bce_prob(&mut self, p: Var, targets: &[S]) -> Result<Var> {
        let t = self.targets("bce_prob", p, targets)?;
        let pv = self.value(p).data();
        let n = pv.len().max(1);
        let (lo, hi) = (S::of(BCE_CLAMP), S::of(1.0 - BCE_CLAMP));
        let total: S = pv
            .iter()
            .zip(&t)
            .map(|(&p, &y)| {
                let pc = p.max(lo).min(hi);
                -(y * pc.ln() + (S::one() - y) * (S::one() - pc).ln())
            })
            .sum();
        let loss = total / S::of(n as f64);
        let needs = self.needs(p.0);
        Ok(self.push(Tensor::scalar(loss), Op::BceProb { p: p.0, t }, needs))
    }

    /// Joins two tensors along their last axis.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(shape_err("concat_last", &sa, &sb));
        }
        let (ma, mb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows = self.value(a).numel() / ma.max(1);
        let rows = if ma == 0 { self.value(b).numel() / mb.max(1) } else { rows };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(rows * (ma + mb));
        for r in 0..rows {
            out.extend_from_slice(&av[r * ma..(r + 1) * ma]);
            out.extend_from_slice(&bv[r * mb..(r + 1) * mb]);
        }
        let mut shape = sa;
        *shape.last_mut().expect("rank >= 1") = ma + mb;
        let t = Tensor::from_vec(&shape, out)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(t, Op::ConcatLast { a: a.0, b: b.0 }, needs))
    }

    /// Scales a learnable vector per position: `h: [R, S]`, `w: [S, d]` gives
    /// `[R, S, d]` with `out[r, s] = h[r, s] · w[s]`.
    pub fn embed_scale(&mut self, h: Var, w: Var) -> Result<Var> {
        let sh = self.shape(h).to_vec();
        let sw = self.shape(w).to_vec();
        if sh.len() != 2 || sw.len() != 2 || sh[1] != sw[0] {
            return Err(shape_err("embed_scale", &sh, &sw));
        }
        let (rows, s, d) = (sh[0], sh[1], sw[1]);
        let hv = self.value(h).data();
        let wv = self.value(w).data();
        let mut out = vec![S::zero(); rows * s * d];
        for r in 0..rows {
            for p in 0..s {
                let scale = hv[r * s + p];
                let dst = &mut out[(r * s + p) * d..(r * s + p + 1) * d];
                for (o, &wv) in dst.iter_mut().zip(&wv[p * d..(p + 1) * d]) {
                    *o = scale * wv;
                }
            }
        }
        let t = Tensor::from_vec(&[rows, s, d], out)?;
        let needs = self.needs(h.0) || self.needs(w.0);
        Ok(self.push(t, Op::EmbedScale { h: h.0, w: w.0 }, needs))
    }

    /// Hard threshold at 0.5 in the forward pass, identity in the backward
    /// pass (straight-through estimator).
    pub fn ste_threshold(&mut self, x: Var) -> Var {
        let half = S::of(0.5);
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > half { S::one() } else { S::zero() })
            .collect();
        let t = Tensor::from_vec(self.shape(x), data).expect("same numel");
        let needs = self.needs(x.0);
        self.push(t, Op::Ste(x.0), needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let needs = self.needs(x.0);
        self.push(Tensor::scalar(s), Op::Sum(x.0), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1) as f64;
        let s = self.sum(x);
        self.affine(s, 1.0 / n, 0.0)
    }

    /// `Σ wᵢ · xᵢ` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(w, v) in terms {
            if self.value(v).numel() != 1 {
                return Err(invalid("weighted_sum expects scalar terms"));
            }
            let scaled = self.affine(v, w, 0.0);
            acc = Some(match acc {
                None => scaled,
                Some(a) => self.add(a, scaled)?,
            });
        }
        acc.ok_or_else(|| invalid("weighted_sum of no terms"))
    }

    /// Gradients of a scalar with respect to every node that needs one.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<S>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(invalid(format!("backward from a non-scalar of shape {:?}", lv.shape())));
        }
        if !lv.item().is_finite() {
            return Err(Error::NumericFailure(format!("loss is {:?}", lv.item().f64())));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), S::one()));
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backward_node(i, &dy, &mut grads);
            // Only inputs keep their gradient; intermediates are released.
            if matches!(self.nodes[i].op, Op::Leaf | Op::Param(_)) {
                grads[i] = Some(dy);
            }
        }
        Ok(Gradients { grads })
    }

    /// Accumulates gradients of `loss` into the parameter store. Repeated
    /// calls add up until [`ParamStore::zero_grad`].
    pub fn backward(&self, loss: Var, store: &mut ParamStore<S>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                store.grad_mut(super::ParamId(*id)).add_assign(g);
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, dy: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let node = &self.nodes[i];
        let dyv = dy.data();
        let val = |j: usize| &self.nodes[j].value;
        let mut acc = |j: usize, g: Vec<S>| {
            if !self.nodes[j].needs_grad {
                return;
            }
            let shape = self.nodes[j].value.shape();
            match &mut grads[j] {
                Some(t) => {
                    for (a, b) in t.data_mut().iter_mut().zip(g) {
                        *a = *a + b;
                    }
                }
                slot @ None => *slot = Some(Tensor::from_vec(shape, g).expect("gradient shape")),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (k, n) = (val(*w).shape()[0], val(*w).shape()[1]);
                let rows = val(*x).numel() / k.max(1);
                if self.needs(*x) {
                    let mut dx = vec![S::zero(); rows * k];
                    gemm(false, true, rows, n, k, S::one(), dyv, val(*w).data(), S::zero(), &mut dx);
                    acc(*x, dx);
                }
                if self.needs(*w) {
                    let mut dw = vec![S::zero(); k * n];
                    gemm(true, false, k, rows, n, S::one(), val(*x).data(), dyv, S::zero(), &mut dw);
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let mut db = vec![S::zero(); n];
                        for r in 0..rows {
                            for (d, &g) in db.iter_mut().zip(&dyv[r * n..(r + 1) * n]) {
                                *d = *d + g;
                            }
                        }
                        acc(*b, db);
                    }
                }
            }
            Op::Add(a, b) => {
                acc(*a, dyv.to_vec());
                acc(*b, dyv.to_vec());
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    acc(*a, dyv.iter().zip(val(*b).data()).map(|(&g, &v)| g * v).collect());
                }
                if self.needs(*b) {
                    acc(*b, dyv.iter().zip(val(*a).data()).map(|(&g, &v)| g * v).collect());
                }
            }
            Op::Affine { x, a } => acc(*x, dyv.iter().map(|&g| g * *a).collect()),
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, dyv.iter().zip(y).map(|(&g, &s)| g * s * (S::one() - s)).collect());
            }
            Op::Gelu(x) => {
                acc(*x, dyv.iter().zip(val(*x).data()).map(|(&g, &v)| g * gelu_grad(v)).collect());
            }
            Op::LayerNorm { x, g, b, xhat, rstd } => {
                let d = val(*x).last_dim();
                let rows = rstd.len();
                let gv = val(*g).data();
                if self.needs(*x) {
                    let mut dx = vec![S::zero(); rows * d];
                    let inv_d = S::one() / S::of(d as f64);
                    for r in 0..rows {
                        let dyr = &dyv[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mut s1 = S::zero();
                        let mut s2 = S::zero();
                        for j in 0..d {
                            let dh = dyr[j] * gv[j];
                            s1 = s1 + dh;
                            s2 = s2 + dh * xh[j];
                        }
                        for j in 0..d {
                            let dh = dyr[j] * gv[j];
                            dx[r * d + j] = rstd[r] * (dh - s1 * inv_d - xh[j] * s2 * inv_d);
                        }
                    }
                    acc(*x, dx);
                }
                if self.needs(*g) || self.needs(*b) {
                    let mut dg = vec![S::zero(); d];
                    let mut db = vec![S::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] = dg[j] + dyv[r * d + j] * xhat[r * d + j];
                            db[j] = db[j] + dyv[r * d + j];
                        }
                    }
                    acc(*g, dg);
                    acc(*b, db);
                }
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let m = node.value.last_dim();
                let mut dx = vec![S::zero(); y.len()];
                for r in 0..y.len() / m.max(1) {
                    let yr = &y[r * m..(r + 1) * m];
                    let gr = &dyv[r * m..(r + 1) * m];
                    let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..m {
                        dx[r * m + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::Bmm { a, b, alpha, nt } => {
                let sa = val(*a).shape();
                let sb = val(*b).shape();
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = if *nt { sb[1] } else { sb[2] };
                let (av, bv) = (val(*a).data(), val(*b).data());
                if self.needs(*a) {
                    let mut da = vec![S::zero(); batch * m * k];
                    for i in 0..batch {
                        let g = &dyv[i * m * n..];
                        // nt: da = dy · b, else da = dy · bᵀ
                        gemm(false, !*nt, m, n, k, *alpha, g, &bv[i * k * n..], S::zero(), &mut da[i * m * k..]);
                    }
                    acc(*a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![S::zero(); batch * k * n];
                    for i in 0..batch {
                        let g = &dyv[i * m * n..];
                        if *nt {
                            // db = dyᵀ · a, shape [n, k]
                            gemm(true, false, n, m, k, *alpha, g, &av[i * m * k..], S::zero(), &mut db[i * k * n..]);
                        } else {
                            // db = aᵀ · dy, shape [k, n]
                            gemm(true, false, k, m, n, *alpha, &av[i * m * k..], g, S::zero(), &mut db[i * k * n..]);
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Permute { x, axes } => {
                let mut inv = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inv[a] = i;
                }
                acc(*x, permute_data(dyv, node.value.shape(), &inv));
            }
            Op::Reshape(x) => acc(*x, dyv.to_vec()),
            Op::MeanAxis { x, axis } => {
                let shape = val(*x).shape();
                let outer: usize = shape[..*axis].iter().product();
                let len = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let inv = S::one() / S::of(len as f64);
                let mut dx = vec![S::zero(); outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for j in 0..inner {
                            dx[(o * len + l) * inner + j] = dyv[o * inner + j] * inv;
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::ProdLast(x) => {
                let xv = val(*x).data();
                let m = val(*x).last_dim();
                let prods = node.value.data();
                let mut dx = vec![S::zero(); xv.len()];
                for (r, row) in xv.chunks(m.max(1)).enumerate() {
                    let dst = &mut dx[r * m..(r + 1) * m];
                    if row.iter().all(|&v| v != S::zero()) {
                        for j in 0..m {
                            dst[j] = dyv[r] * prods[r] / row[j];
                        }
                    } else {
                        // Leave-one-out products via prefix and suffix scans.
                        let mut prefix = S::one();
                        for j in 0..m {
                            dst[j] = prefix;
                            prefix = prefix * row[j];
                        }
                        let mut suffix = S::one();
                        for j in (0..m).rev() {
                            dst[j] = dst[j] * suffix * dyv[r];
                            suffix = suffix * row[j];
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::Bipolar { x, support } => {
                let shape = val(*x).shape();
                let (batch, n) = (shape[0], shape[1]);
                let k = support.len();
                let two = S::of(2.0);
                let mut dx = vec![S::zero(); batch * n];
                for bi in 0..batch {
                    for (i, sup) in support.iter().enumerate() {
                        for &j in sup {
                            dx[bi * n + j] = dx[bi * n + j] - two * dyv[(bi * k + i) * n + j];
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::BceLogits { z, t } => {
                let zv = val(*z).data();
                let scale = dyv[0] / S::of(zv.len().max(1) as f64);
                acc(*z, zv.iter().zip(t).map(|(&z, &y)| (sigmoid(z) - y) * scale).collect());
            }
            Op::BceProb { p, t } => {
                let pv = val(*p).data();
                let scale = dyv[0] / S::of(pv.len().max(1) as f64);
                let (lo, hi) = (S::of(BCE_CLAMP), S::of(1.0 - BCE_CLAMP));
                acc(
                    *p,
                    pv.iter()
                        .zip(t)
                        .map(|(&p, &y)| {
                            let pc = p.max(lo).min(hi);
                            (pc - y) / (pc * (S::one() - pc)) * scale
                        })
                        .collect(),
                );
            }
            Op::ConcatLast { a, b } => {
                let ma = val(*a).last_dim();
                let mb = val(*b).last_dim();
                let rows = dyv.len() / (ma + mb).max(1);
                let mut da = Vec::with_capacity(rows * ma);
                let mut db = Vec::with_capacity(rows * mb);
                for r in 0..rows {
                    let row = &dyv[r * (ma + mb)..(r + 1) * (ma + mb)];
                    da.extend_from_slice(&row[..ma]);
                    db.extend_from_slice(&row[ma..]);
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::EmbedScale { h, w } => {
                let sw = val(*w).shape();
                let (s, d) = (sw[0], sw[1]);
                let rows = val(*h).shape()[0];
                let hv = val(*h).data();
                let wv = val(*w).data();
                if self.needs(*h) {
                    let mut dh = vec![S::zero(); rows * s];
                    for r in 0..rows {
                        for p in 0..s {
                            let g = &dyv[(r * s + p) * d..(r * s + p + 1) * d];
                            dh[r * s + p] = g.iter().zip(&wv[p * d..(p + 1) * d]).map(|(&a, &b)| a * b).sum();
                        }
                    }
                    acc(*h, dh);
                }
                if self.needs(*w) {
                    let mut dw = vec![S::zero(); s * d];
                    for r in 0..rows {
                        for p in 0..s {
                            let scale = hv[r * s + p];
                            let g = &dyv[(r * s + p) * d..(r * s + p + 1) * d];
                            for (o, &gv) in dw[p * d..(p + 1) * d].iter_mut().zip(g) {
                                *o = *o + scale * gv;
                            }
                        }
                    }
                    acc(*w, dw);
                }
            }
            Op::Ste(x) => acc(*x, dyv.to_vec()),
            Op::Sum(x) => acc(*x, vec![dyv[0]; val(*x).numel()]),
        }
    }
}

/// Result of [`Tape::gradients`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}
