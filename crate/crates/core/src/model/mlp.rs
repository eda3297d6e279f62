use super::qecct::{sequence_input, GOmega, Linear};
use super::{Batch, ModelOutput, NeuralModel, Objective};
use crate::autodiff::{ParamStore, Scalar, Tape};
use crate::codes::SectorView;
use crate::error::{invalid, Result};
use crate::noise::StreamRng;

/// Fully connected baseline over the same input sequence as [`Qecct`](super::Qecct).
#[derive(Clone, Debug, PartialEq)]
pub struct MlpConfig {
    /// Number of hidden GELU layers.
    pub depth: usize,
    pub width: usize,
    /// Rounds are averaged after this hidden layer, `1 <= P <= depth`.
    pub pooling_layer: usize,
    pub objective: Objective,
    pub use_g_omega: bool,
}

impl MlpConfig {
    pub fn new(depth: usize, width: usize) -> Self {
        Self {
            depth,
            width,
            pooling_layer: (depth / 2).max(1),
            objective: Objective::default(),
            use_g_omega: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 {
            return Err(invalid("depth and width must be positive"));
        }
        if self.pooling_layer == 0 || self.pooling_layer > self.depth {
            return Err(invalid(format!(
                "pooling_layer must be in 1..={}, got {}",
                self.depth, self.pooling_layer
            )));
        }
        self.objective.validate()
    }

    /// Widest network of this depth that stays within `budget` parameters.
    pub fn width_for_budget(depth: usize, budget: usize, view: &SectorView, use_g_omega: bool) -> Option<usize> {
        let count = |w: usize| Self::param_count(depth, w, view, use_g_omega);
        if count(1) > budget {
            return None;
        }
        let (mut lo, mut hi) = (1usize, 2usize);
        while count(hi) <= budget {
            lo = hi;
            hi *= 2;
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if count(mid) <= budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(lo)
    }

    /// Trainable values of a network with this shape.
    pub fn param_count(depth: usize, width: usize, view: &SectorView, use_g_omega: bool) -> usize {
        let (n_s, n_err) = (view.n_s(), view.n_err());
        let len = n_s + n_err;
        let g = if use_g_omega {
            (n_s + 1) * 5 * n_s + (5 * n_s + 1) * n_err
        } else {
            0
        };
        g + (len + 1) * width + (depth - 1) * (width + 1) * width + (width + 1) * n_err
    }
}

/// Multilayer perceptron decoder with the same input, pooling and losses as
/// the transformer.
#[derive(Clone, Debug)]
pub struct Mlp<S> {
    config: MlpConfig,
    view: SectorView,
    params: ParamStore<S>,
    g: Option<GOmega>,
    hidden: Vec<Linear>,
    out: Linear,
}

impl<S: Scalar> Mlp<S> {
    pub fn new(config: MlpConfig, view: SectorView, seed: u64) -> Result<Self> {
        config.validate()?;
        let (n_s, n_err) = (view.n_s(), view.n_err());
        let mut rng = StreamRng::derive(seed, &[0x4d4c_50]);
        let mut store = ParamStore::new();
        let g = if config.use_g_omega {
            Some(GOmega::new(&mut store, n_s, n_err, &mut rng)?)
        } else {
            None
        };
        let mut hidden = Vec::with_capacity(config.depth);
        let mut fan_in = n_s + n_err;
        for i in 0..config.depth {
            let (w, b) = super::add_linear(&mut store, &format!("hidden{i}"), fan_in, config.width, &mut rng)?;
            hidden.push(Linear { w, b });
            fan_in = config.width;
        }
        let (w, b) = super::add_linear(&mut store, "out", config.width, n_err, &mut rng)?;
        Ok(Self {
            config,
            view,
            params: store,
            g,
            hidden,
            out: Linear { w, b },
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    /// Sets every weight and bias to zero.
    pub fn zero_all(&mut self) {
        let ids: Vec<_> = self.params.ids().collect();
        for id in ids {
            self.params.value_mut(id).data_mut().iter_mut().for_each(|v| *v = S::zero());
        }
    }
}

impl<S: Scalar> NeuralModel<S> for Mlp<S> {
    fn kind(&self) -> &'static str {
        "mlp"
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
        if batch.n_s != self.view.n_s() || batch.n_err != self.view.n_err() {
            return Err(invalid("batch does not match the model's sector"));
        }
        let (mut x, g_logits) = sequence_input(tape, &self.params, self.g.as_ref(), batch)?;
        let mut pooled = x;
        for (i, layer) in self.hidden.iter().enumerate() {
            x = layer.apply(tape, &self.params, x)?;
            x = tape.gelu(x);
            if i + 1 == self.config.pooling_layer {
                let r = tape.reshape(x, &[batch.size, batch.rounds, self.config.width])?;
                x = tape.mean_axis(r, 1)?;
                pooled = x;
            }
        }
        let noise_logits = self.out.apply(tape, &self.params, x)?;
        Ok(ModelOutput {
            noise_logits,
            g_logits,
            pooled,
        })
    }
}
