//! Neural decoders and their training objective.
//!
//! Both models read the same input: for every measurement round, an initial
//! noise estimate `g_ω(s_t)` concatenated with the bipolar syndrome `1 - 2 s_t`.
//! They predict noise logits for the error coordinates of one
//! [`SectorView`](crate::codes::SectorView).

mod mlp;
mod qecct;
mod spec;

pub use mlp::{Mlp, MlpConfig};
pub use qecct::{Qecct, QecctConfig};
pub use spec::{AnyModel, ModelSpec};

use std::fmt;

use crate::autodiff::{ParamStore, Scalar, Tape, Tensor, Var};
use crate::codes::SectorView;
use crate::error::{invalid, Result};
use crate::gf2::BitMatrix;
use crate::noise::SyndromeRun;

/// Relaxation used for the binarised prediction inside the logical loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinMode {
    Sigmoid,
    /// Hard threshold forward, identity backward.
    Ste,
}

impl BinMode {
    pub fn name(self) -> &'static str {
        match self {
            BinMode::Sigmoid => "sigmoid",
            BinMode::Ste => "ste",
        }
    }
}

impl fmt::Display for BinMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BinMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(BinMode::Sigmoid),
            "ste" => Ok(BinMode::Ste),
            other => Err(invalid(format!("unknown bin mode {other:?}"))),
        }
    }
}

/// Loss weights and binarisation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub lambda_ber: f64,
    pub lambda_ler: f64,
    pub lambda_g: f64,
    pub bin_mode: BinMode,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            lambda_ber: 0.5,
            lambda_ler: 1.0,
            lambda_g: 0.5,
            bin_mode: BinMode::Sigmoid,
        }
    }
}

impl Objective {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("lambda_ber", self.lambda_ber),
            ("lambda_ler", self.lambda_ler),
            ("lambda_g", self.lambda_g),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(invalid(format!("{name} must be a finite nonnegative weight, got {w}")));
            }
        }
        if self.lambda_ber + self.lambda_ler + self.lambda_g == 0.0 {
            return Err(invalid("all loss weights are zero"));
        }
        Ok(())
    }
}

/// Syndromes and targets of `size` runs with `rounds` rounds each, restricted
/// to one sector.
#[derive(Clone, Debug)]
pub struct Batch<S> {
    pub size: usize,
    pub rounds: usize,
    pub n_s: usize,
    pub n_err: usize,
    pub n_logical: usize,
    /// `[size, rounds, n_s]` in {0, 1}.
    pub syndromes: Vec<S>,
    /// Cumulative sector error, `[size, n_err]`.
    pub errors: Vec<S>,
    /// `𝕃 ε`, `[size, n_logical]`.
    pub logicals: Vec<S>,
}

impl<S: Scalar> Batch<S> {
    pub fn from_runs(view: &SectorView, runs: &[SyndromeRun]) -> Result<Self> {
        let first = runs.first().ok_or_else(|| invalid("empty batch"))?;
        let rounds = first.rounds();
        let (n_s, n_err, n_logical) = (view.n_s(), view.n_err(), view.n_logical());
        let mut b = Batch {
            size: runs.len(),
            rounds,
            n_s,
            n_err,
            n_logical,
            syndromes: Vec::with_capacity(runs.len() * rounds * n_s),
            errors: Vec::with_capacity(runs.len() * n_err),
            logicals: Vec::with_capacity(runs.len() * n_logical),
        };
        let bit = |v: bool| if v { S::one() } else { S::zero() };
        for run in runs {
            if run.rounds() != rounds {
                return Err(invalid("all runs in a batch need the same number of rounds"));
            }
            for s in &run.syndromes {
                let s = view.syndrome_slice(s);
                b.syndromes.extend((0..n_s).map(|i| bit(s.get(i))));
            }
            let e = view.error_slice(&run.cumulative_error);
            if e.len() != n_err {
                return Err(invalid("run does not match the sector size"));
            }
            b.errors.extend((0..n_err).map(|i| bit(e.get(i))));
            let l = view.logicals.matvec(&e)?;
            b.logicals.extend((0..n_logical).map(|i| bit(l.get(i))));
        }
        Ok(b)
    }

    /// Reorders the rounds of every sample.
    pub fn with_round_order(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.rounds);
        let mut out = self.clone();
        for b in 0..self.size {
            for (dst, &src) in order.iter().enumerate() {
                let from = (b * self.rounds + src) * self.n_s;
                let to = (b * self.rounds + dst) * self.n_s;
                out.syndromes[to..to + self.n_s].copy_from_slice(&self.syndromes[from..from + self.n_s]);
            }
        }
        out
    }
}

/// Graph handles produced by a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    /// `[size, n_err]`.
    pub noise_logits: Var,
    /// `[size, rounds, n_err]`, absent when the estimator is ablated.
    pub g_logits: Option<Var>,
    /// Hidden state right after pooling over rounds.
    pub pooled: Var,
}

/// Scalar loss and its three unweighted terms.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub ber: Var,
    pub ler: Var,
    pub g: Option<Var>,
}

/// Common interface of the neural decoders.
pub trait NeuralModel<S: Scalar>: Send + Sync {
    fn kind(&self) -> &'static str;
    fn view(&self) -> &SectorView;
    fn params(&self) -> &ParamStore<S>;
    fn params_mut(&mut self) -> &mut ParamStore<S>;
    fn objective(&self) -> Objective;
    fn forward(&self, tape: &mut Tape<S>, batch: &Batch<S>) -> Result<ModelOutput>;
}

/// Differentiable `𝕃 ⊕ x`: row `i` is `1/2 - 1/2 Π_{j: 𝕃_ij = 1} (1 - 2 x_j)`.
///
/// `x_soft` is `[B, n]` with values in `[0, 1]`; the result is `[B, k]`.
pub fn xor_projection<S: Scalar>(tape: &mut Tape<S>, logicals: &BitMatrix, x_soft: Var) -> Result<Var> {
    let factors = tape.bipolar_factors(x_soft, logicals)?;
    let prod = tape.prod_last(factors)?;
    Ok(tape.affine(prod, -0.5, 0.5))
}

/// Bipolar syndrome `1 - 2 s` of a batch, shaped `[size * rounds, n_s]`.
pub(crate) fn bipolar_syndromes<S: Scalar>(tape: &mut Tape<S>, batch: &Batch<S>) -> Result<Var> {
    let two = S::of(2.0);
    let data = batch.syndromes.iter().map(|&s| S::one() - two * s).collect();
    Ok(tape.constant(Tensor::from_vec(&[batch.size * batch.rounds, batch.n_s], data)?))
}

/// `λ_BER · BCE(logits, ε) + λ_LER · BCE(𝕃 ⊕ bin(logits), 𝕃ε) + λ_g · BCE(mean_t g, ε)`.
///
/// Terms with zero weight are left out of the total.
pub fn total_loss<S: Scalar>(
    tape: &mut Tape<S>,
    objective: &Objective,
    logicals: &BitMatrix,
    out: &ModelOutput,
    batch: &Batch<S>,
) -> Result<LossTerms> {
    let ber = tape.bce_with_logits(out.noise_logits, &batch.errors)?;
    let probs = tape.sigmoid(out.noise_logits);
    let bin = match objective.bin_mode {
        BinMode::Sigmoid => probs,
        BinMode::Ste => tape.ste_threshold(probs),
    };
    let lam = xor_projection(tape, logicals, bin)?;
    let ler = tape.bce_prob(lam, &batch.logicals)?;
    let g = match out.g_logits {
        Some(g) => {
            let pooled = tape.mean_axis(g, 1)?;
            Some(tape.bce_with_logits(pooled, &batch.errors)?)
        }
        None => None,
    };
    let mut terms = Vec::with_capacity(3);
    if objective.lambda_ber != 0.0 {
        terms.push((objective.lambda_ber, ber));
    }
    if objective.lambda_ler != 0.0 {
        terms.push((objective.lambda_ler, ler));
    }
    if let Some(g) = g {
        if objective.lambda_g != 0.0 {
            terms.push((objective.lambda_g, g));
        }
    }
    let total = tape.weighted_sum(&terms)?;
    let v = tape.value(total).item();
    if !v.is_finite() {
        return Err(crate::Error::NumericFailure(format!("loss is {:?}", v.f64())));
    }
    Ok(LossTerms { total, ber, ler, g })
}

/// Hard decisions `logit > 0` for every sample of a forward pass.
pub fn hard_decisions<S: Scalar>(tape: &Tape<S>, logits: Var) -> Vec<Vec<bool>> {
    let t = tape.value(logits);
    let n = t.last_dim();
    t.data().chunks(n.max(1)).map(|row| row.iter().map(|&v| v > S::zero()).collect()).collect()
}

/// Xavier-initialised `[fan_in, fan_out]` weight plus a zero bias.
pub(crate) fn add_linear<S: Scalar>(
    store: &mut ParamStore<S>,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl rand::Rng,
) -> Result<(crate::autodiff::ParamId, crate::autodiff::ParamId)> {
    let w = store.add_xavier(&format!("{name}.w"), &[fan_in, fan_out], rng)?;
    let b = store.add_filled(&format!("{name}.b"), &[fan_out], 0.0)?;
    Ok((w, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;
    use crate::noise::StreamRng;
    use rand::Rng;

    fn gf2_rows(m: &BitMatrix, x: &[bool]) -> Vec<f64> {
        (0..m.rows())
            .map(|i| (m.row_support(i).iter().filter(|&&j| x[j]).count() % 2) as f64)
            .collect()
    }

    fn check_matrix(m: &BitMatrix) {
        let n = m.cols();
        let inputs: Vec<Vec<bool>> = (0..1u32 << n).map(|v| (0..n).map(|j| v >> j & 1 == 1).collect()).collect();
        let data: Vec<f64> = inputs.iter().flatten().map(|&b| b as u8 as f64).collect();
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(&[inputs.len(), n], data).unwrap());
        let y = xor_projection(&mut tape, m, x).unwrap();
        let out = tape.value(y).data();
        for (i, x) in inputs.iter().enumerate() {
            assert_eq!(&out[i * m.rows()..(i + 1) * m.rows()], gf2_rows(m, x).as_slice(), "{m:?} {x:?}");
        }
    }

    #[test]
    fn xor_projection_matches_gf2_products() {
        // Every matrix of every shape with at most 12 entries.
        for k in 1..=4 {
            for n in 1..=6 {
                if k * n > 12 {
                    continue;
                }
                for bits in 0..1u32 << (k * n) {
                    let dense: Vec<Vec<u8>> =
                        (0..k).map(|i| (0..n).map(|j| (bits >> (i * n + j) & 1) as u8).collect()).collect();
                    check_matrix(&BitMatrix::from_dense(&dense));
                }
            }
        }
        // Sampled matrices for the larger shapes, up to 4 x 6.
        let mut rng = StreamRng::from_seed(3);
        for k in 1..=4 {
            for n in 1..=6 {
                if k * n <= 12 {
                    continue;
                }
                for _ in 0..200 {
                    let dense: Vec<Vec<u8>> = (0..k).map(|_| (0..n).map(|_| rng.random_range(0..2)).collect()).collect();
                    check_matrix(&BitMatrix::from_dense(&dense));
                }
            }
        }
    }

    #[test]
    fn xor_projection_of_zero_is_zero() {
        let m = BitMatrix::from_dense(&[vec![1, 1, 0], vec![0, 1, 1]]);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3]));
        let y = xor_projection(&mut tape, &m, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn xor_projection_gradients() {
        let mut rng = StreamRng::from_seed(8);
        for _ in 0..20 {
            let dense: Vec<Vec<u8>> = (0..4).map(|_| (0..6).map(|_| rng.random_range(0..2)).collect()).collect();
            let m = BitMatrix::from_dense(&dense);
            let x: Vec<f64> = (0..12).map(|_| rng.random_range(0.1..0.9)).collect();
            let w: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = check_gradients(&[Tensor::from_vec(&[2, 6], x).unwrap()], 1e-3, 1e-6, |t, v| {
                let y = xor_projection(t, &m, v[0])?;
                let w = t.constant(Tensor::from_vec(&[2, 4], w.clone())?);
                let p = t.mul(y, w)?;
                Ok(t.sum(p))
            })
            .unwrap();
            assert!(r.max_rel_err <= 1e-6, "{r:?}");
        }
    }

    fn output_from(tape: &mut Tape<f64>, logits: Vec<f64>, g: Vec<f64>, size: usize, rounds: usize) -> ModelOutput {
        let n = logits.len() / size;
        let noise_logits = tape.leaf(Tensor::from_vec(&[size, n], logits).unwrap());
        let g_logits = Some(tape.leaf(Tensor::from_vec(&[size, rounds, n], g).unwrap()));
        ModelOutput {
            noise_logits,
            g_logits,
            pooled: noise_logits,
        }
    }

    fn toy_batch() -> Batch<f64> {
        Batch {
            size: 2,
            rounds: 2,
            n_s: 1,
            n_err: 3,
            n_logical: 2,
            syndromes: vec![1.0, 1.0, 0.0, 0.0],
            errors: vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0],
            logicals: vec![1.0, 0.0, 1.0, 0.0],
        }
    }

    fn toy_logicals() -> BitMatrix {
        BitMatrix::from_dense(&[vec![1, 1, 0], vec![0, 1, 1]])
    }

    #[test]
    fn loss_vanishes_for_confident_correct_predictions() {
        let b = toy_batch();
        let mut last = f64::INFINITY;
        for scale in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
            let logits: Vec<f64> = b.errors.iter().map(|&e| scale * (2.0 * e - 1.0)).collect();
            // The same estimate in every round of a sample.
            let g: Vec<f64> = logits.chunks(3).flat_map(|row| [row, row].concat()).collect();
            let mut tape = Tape::new();
            let out = output_from(&mut tape, logits, g, b.size, b.rounds);
            let terms = total_loss(&mut tape, &Objective::default(), &toy_logicals(), &out, &b).unwrap();
            let v = tape.value(terms.total).item();
            assert!(v < last, "{v} after {last}");
            last = v;
        }
        assert!(last < 1e-5);
    }

    #[test]
    fn default_weights_match_a_hand_computed_sum() {
        let b = toy_batch();
        let logits = vec![0.3, -1.2, 0.8, -0.4, 2.0, 0.1];
        let g = vec![0.5, -0.5, 1.0, -1.5, 0.5, 0.0, 0.2, 0.4, -0.6, 1.0, 1.0, 1.0];
        let mut tape = Tape::new();
        let out = output_from(&mut tape, logits.clone(), g.clone(), 2, 2);
        let got = total_loss(&mut tape, &Objective::default(), &toy_logicals(), &out, &b).unwrap();

        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let bce = |p: f64, y: f64| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        let ber = logits.iter().zip(&b.errors).map(|(&z, &y)| bce(sig(z), y)).sum::<f64>() / 6.0;
        let mut ler = 0.0;
        for s in 0..2 {
            let x: Vec<f64> = (0..3).map(|j| sig(logits[s * 3 + j])).collect();
            let rows = [(1.0 - 2.0 * x[0]) * (1.0 - 2.0 * x[1]), (1.0 - 2.0 * x[1]) * (1.0 - 2.0 * x[2])];
            for (i, prod) in rows.iter().enumerate() {
                ler += bce(0.5 - 0.5 * prod, b.logicals[s * 2 + i]);
            }
        }
        ler /= 4.0;
        let mut lg = 0.0;
        for s in 0..2 {
            for j in 0..3 {
                let mean = (g[s * 6 + j] + g[s * 6 + 3 + j]) / 2.0;
                lg += bce(sig(mean), b.errors[s * 3 + j]);
            }
        }
        lg /= 6.0;
        let want = 0.5 * ber + 1.0 * ler + 0.5 * lg;
        assert!((tape.value(got.total).item() - want).abs() < 1e-12);
    }

    #[test]
    fn non_finite_loss_is_a_numeric_failure() {
        let b = toy_batch();
        let mut tape = Tape::new();
        let out = output_from(&mut tape, vec![f64::NAN; 6], vec![0.0; 12], 2, 2);
        let err = total_loss(&mut tape, &Objective::default(), &toy_logicals(), &out, &b).unwrap_err();
        assert!(matches!(err, crate::Error::NumericFailure(_)));
    }

    #[test]
    fn batch_from_runs_slices_the_sector() {
        use crate::codes::{Sector, StabilizerCode};
        use crate::noise::{sample_faulty_run, Channel};
        let code = StabilizerCode::toric(3).unwrap();
        let mut rng = StreamRng::from_seed(4);
        let runs: Vec<_> = (0..3)
            .map(|_| sample_faulty_run(&code, Channel::Depolarizing, 0.2, 0.1, 2, &mut rng).unwrap())
            .collect();
        for sector in [Sector::X, Sector::Z, Sector::Joint] {
            let view = code.view(sector);
            let b = Batch::<f32>::from_runs(&view, &runs).unwrap();
            assert_eq!(b.syndromes.len(), 3 * 2 * view.n_s());
            for (i, run) in runs.iter().enumerate() {
                let e = view.error_slice(&run.cumulative_error);
                let l = view.logicals.matvec(&e).unwrap();
                for j in 0..view.n_logical() {
                    assert_eq!(b.logicals[i * view.n_logical() + j] == 1.0, l.get(j));
                }
                let s = view.syndrome_slice(&run.syndromes[1]);
                for j in 0..view.n_s() {
                    assert_eq!(b.syndromes[(i * 2 + 1) * view.n_s() + j] == 1.0, s.get(j));
                }
            }
        }
        let short = sample_faulty_run(&code, Channel::Independent, 0.1, 0.1, 1, &mut rng).unwrap();
        let mixed = vec![runs[0].clone(), short];
        assert!(Batch::<f32>::from_runs(&code.view(Sector::X), &mixed).is_err());
        assert!(Batch::<f32>::from_runs(&code.view(Sector::X), &[]).is_err());
    }
}
