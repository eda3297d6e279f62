use super::{add_linear, bipolar_syndromes, Batch, ModelOutput, NeuralModel, Objective};
use crate::autodiff::{ParamId, ParamStore, Scalar, Tape, Var};
use crate::codes::{AttentionMask, SectorView};
use crate::error::{invalid, Result};
use crate::noise::StreamRng;

/// Shape and training objective of a [`Qecct`] model.
#[derive(Clone, Debug, PartialEq)]
pub struct QecctConfig {
    /// Number of transformer layers `N`.
    pub n_layers: usize,
    /// Embedding width `d`.
    pub d_model: usize,
    pub heads: usize,
    /// Rounds are averaged after this layer, `1 <= P <= N`.
    pub pooling_layer: usize,
    pub objective: Objective,
    /// Feed `g_ω(s)` into the sequence; ones are used instead when disabled.
    pub use_g_omega: bool,
    /// Restrict attention with the parity-check mask.
    pub masked: bool,
}

impl QecctConfig {
    /// Eight heads, pooling after layer `max(1, ⌊N/2⌋)`, default objective.
    pub fn new(n_layers: usize, d_model: usize) -> Self {
        Self {
            n_layers,
            d_model,
            heads: 8,
            pooling_layer: (n_layers / 2).max(1),
            objective: Objective::default(),
            use_g_omega: true,
            masked: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.d_model == 0 || self.heads == 0 {
            return Err(invalid("n_layers, d_model and heads must be positive"));
        }
        if self.d_model % self.heads != 0 {
            return Err(invalid(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.pooling_layer == 0 || self.pooling_layer > self.n_layers {
            return Err(invalid(format!(
                "pooling_layer must be in 1..={}, got {}",
                self.n_layers, self.pooling_layer
            )));
        }
        self.objective.validate()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub(crate) w: ParamId,
    pub(crate) b: ParamId,
}

impl Linear {
    fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, i: usize, o: usize, rng: &mut StreamRng) -> Result<Self> {
        let (w, b) = add_linear(store, name, i, o, rng)?;
        Ok(Self { w, b })
    }

    pub(crate) fn apply<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.linear(x, w, Some(b))
    }
}

#[derive(Clone, Debug)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

impl Norm {
    fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            g: store.add_filled(&format!("{name}.g"), &[d], 1.0)?,
            b: store.add_filled(&format!("{name}.b"), &[d], 0.0)?,
        })
    }

    fn apply<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.g);
        let b = tape.param(store, self.b);
        tape.layer_norm(x, g, b)
    }
}

#[derive(Clone, Debug)]
struct Layer {
    ln1: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
}

/// Initial noise estimator `g_ω`: `n_s → 5 n_s → n_err` with GELU.
#[derive(Clone, Debug)]
pub(crate) struct GOmega {
    pub(crate) l1: Linear,
    pub(crate) l2: Linear,
}

impl GOmega {
    pub(crate) fn new<S: Scalar>(store: &mut ParamStore<S>, n_s: usize, n_err: usize, rng: &mut StreamRng) -> Result<Self> {
        Ok(Self {
            l1: Linear::new(store, "g.l1", n_s, 5 * n_s, rng)?,
            l2: Linear::new(store, "g.l2", 5 * n_s, n_err, rng)?,
        })
    }

    /// Logits for `[rows, n_s]` bipolar syndromes.
    pub(crate) fn apply<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, bipolar: Var) -> Result<Var> {
        let h = self.l1.apply(tape, store, bipolar)?;
        let h = tape.gelu(h);
        self.l2.apply(tape, store, h)
    }
}

/// Builds the per-round sequence `[g_ω(s_t) | 1 - 2 s_t]`, shaped
/// `[size * rounds, n_err + n_s]`, and returns it with the g logits
/// reshaped to `[size, rounds, n_err]`.
pub(crate) fn sequence_input<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    g: Option<&GOmega>,
    batch: &Batch<S>,
) -> Result<(Var, Option<Var>)> {
    let bipolar = bipolar_syndromes(tape, batch)?;
    let rows = batch.size * batch.rounds;
    let (estimate, g_logits) = match g {
        Some(g) => {
            let logits = g.apply(tape, store, bipolar)?;
            let per_round = tape.reshape(logits, &[batch.size, batch.rounds, batch.n_err])?;
            (logits, Some(per_round))
        }
        None => (tape.constant(crate::autodiff::Tensor::filled(&[rows, batch.n_err], S::one())), None),
    };
    Ok((tape.concat_last(estimate, bipolar)?, g_logits))
}

/// Masked transformer decoder over `[noise estimate | syndrome]` positions.
///
/// Layers up to the pooling layer run on every round separately; their
/// outputs are averaged over rounds and the remaining layers run once.
#[derive(Clone, Debug)]
pub struct Qecct<S> {
    config: QecctConfig,
    view: SectorView,
    mask: Option<Vec<S>>,
    params: ParamStore<S>,
    g: Option<GOmega>,
    embed: ParamId,
    layers: Vec<Layer>,
    final_norm: Norm,
    head_pos: Linear,
    head_out: Linear,
}

impl<S: Scalar> Qecct<S> {
    pub fn new(config: QecctConfig, view: SectorView, seed: u64) -> Result<Self> {
        config.validate()?;
        let (n_s, n_err) = (view.n_s(), view.n_err());
        let len = n_s + n_err;
        let d = config.d_model;
        let mut rng = StreamRng::derive(seed, &[0x5143_4354]);
        let mut store = ParamStore::new();
        let g = if config.use_g_omega {
            Some(GOmega::new(&mut store, n_s, n_err, &mut rng)?)
        } else {
            None
        };
        let embed = store.add_xavier("embed", &[len, d], &mut rng)?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let p = |s: &str| format!("layer{i}.{s}");
            layers.push(Layer {
                ln1: Norm::new(&mut store, &p("ln1"), d)?,
                q: Linear::new(&mut store, &p("q"), d, d, &mut rng)?,
                k: Linear::new(&mut store, &p("k"), d, d, &mut rng)?,
                v: Linear::new(&mut store, &p("v"), d, d, &mut rng)?,
                o: Linear::new(&mut store, &p("o"), d, d, &mut rng)?,
                ln2: Norm::new(&mut store, &p("ln2"), d)?,
                ff1: Linear::new(&mut store, &p("ff1"), d, 4 * d, &mut rng)?,
                ff2: Linear::new(&mut store, &p("ff2"), 4 * d, d, &mut rng)?,
            });
        }
        let final_norm = Norm::new(&mut store, "final_ln", d)?;
        let head_pos = Linear::new(&mut store, "head.pos", d, 1, &mut rng)?;
        let head_out = Linear::new(&mut store, "head.out", len, n_err, &mut rng)?;
        let mask = config.masked.then(|| AttentionMask::from_parity_check(&view.h).additive::<S>());
        Ok(Self {
            config,
            view,
            mask,
            params: store,
            g,
            embed,
            layers,
            final_norm,
            head_pos,
            head_out,
        })
    }

    pub fn config(&self) -> &QecctConfig {
        &self.config
    }

    pub fn seq_len(&self) -> usize {
        self.view.n_s() + self.view.n_err()
    }

    /// Embeds `[rows, S]` sequence values into `[rows, S, d]`.
    pub(crate) fn embed(&self, tape: &mut Tape<S>, h: Var) -> Result<Var> {
        let w = tape.param(&self.params, self.embed);
        tape.embed_scale(h, w)
    }

    /// Layer norm followed by multi-head attention, without the residual.
    pub(crate) fn attention(&self, tape: &mut Tape<S>, layer: usize, x: Var) -> Result<Var> {
        let l = &self.layers[layer];
        let p = &self.params;
        let shape = tape.shape(x).to_vec();
        let (rows, len, d) = (shape[0], shape[1], shape[2]);
        let heads = self.config.heads;
        let dh = d / heads;
        let a = l.ln1.apply(tape, p, x)?;
        let split = |lin: &Linear, tape: &mut Tape<S>| -> Result<Var> {
            let y = lin.apply(tape, p, a)?;
            let y = tape.reshape(y, &[rows, len, heads, dh])?;
            let y = tape.permute(y, &[0, 2, 1, 3])?;
            tape.reshape(y, &[rows * heads, len, dh])
        };
        let q = split(&l.q, tape)?;
        let k = split(&l.k, tape)?;
        let v = split(&l.v, tape)?;
        let scores = tape.bmm_nt(q, k, 1.0 / (dh as f64).sqrt())?;
        let attn = tape.masked_softmax(scores, self.mask.as_deref())?;
        let y = tape.bmm(attn, v, 1.0)?;
        let y = tape.reshape(y, &[rows, heads, len, dh])?;
        let y = tape.permute(y, &[0, 2, 1, 3])?;
        let y = tape.reshape(y, &[rows, len, d])?;
        l.o.apply(tape, p, y)
    }

    fn layer(&self, tape: &mut Tape<S>, layer: usize, x: Var) -> Result<Var> {
        let l = &self.layers[layer];
        let p = &self.params;
        let a = self.attention(tape, layer, x)?;
        let x = tape.add(x, a)?;
        let f = l.ln2.apply(tape, p, x)?;
        let f = l.ff1.apply(tape, p, f)?;
        let f = tape.gelu(f);
        let f = l.ff2.apply(tape, p, f)?;
        tape.add(x, f)
    }

    /// Forward pass; `pool = false` skips the round average and is only
    /// meaningful for single-round batches.
    pub(crate) fn forward_impl(&self, tape: &mut Tape<S>, batch: &Batch<S>, pool: bool) -> Result<ModelOutput> {
        if batch.n_s != self.view.n_s() || batch.n_err != self.view.n_err() {
            return Err(invalid("batch does not match the model's sector"));
        }
        let (h, g_logits) = sequence_input(tape, &self.params, self.g.as_ref(), batch)?;
        let mut x = self.embed(tape, h)?;
        let (len, d) = (self.seq_len(), self.config.d_model);
        for i in 0..self.config.pooling_layer {
            x = self.layer(tape, i, x)?;
        }
        let pooled = if pool {
            let r = tape.reshape(x, &[batch.size, batch.rounds, len, d])?;
            tape.mean_axis(r, 1)?
        } else {
            if batch.rounds != 1 {
                return Err(invalid("unpooled forward needs a single round"));
            }
            x
        };
        x = pooled;
        for i in self.config.pooling_layer..self.config.n_layers {
            x = self.layer(tape, i, x)?;
        }
        let x = self.final_norm.apply(tape, &self.params, x)?;
        let x = self.head_pos.apply(tape, &self.params, x)?;
        let x = tape.reshape(x, &[batch.size, len])?;
        let noise_logits = self.head_out.apply(tape, &self.params, x)?;
        Ok(ModelOutput {
            noise_logits,
            g_logits,
            pooled,
        })
    }

    /// Single-round forward pass with the round average left out of the
    /// graph, for comparison with the pooled pass.
    pub fn forward_unpooled(&self, tape: &mut Tape<S>, batch: &Batch<S>) -> Result<ModelOutput> {
        self.forward_impl(tape, batch, false)
    }

    /// Sets the weights and bias of `g_ω`'s output layer to zero.
    pub fn zero_g_output(&mut self) {
        if let Some(g) = &self.g {
            for id in [g.l2.w, g.l2.b] {
                self.params.value_mut(id).data_mut().iter_mut().for_each(|v| *v = S::zero());
            }
        }
    }
}

impl<S: Scalar> NeuralModel<S> for Qecct<S> {
    fn kind(&self) -> &'static str {
        "qecct"
    }

    fn view(&self) -> &SectorView {
        &self.view
    }

    fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    fn objective(&self) -> Objective {
        self.config.objective
    }

    fn forward(&self, tape: &mut Tape<S>, batch: &Batch<S>) -> Result<ModelOutput> {
        self.forward_impl(tape, batch, true)
    }
}
