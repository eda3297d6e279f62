use super::{Batch, BinMode, Mlp, MlpConfig, ModelOutput, NeuralModel, Objective, Qecct, QecctConfig};
use crate::autodiff::{ParamStore, Scalar, Tape};
use crate::codes::SectorView;
use crate::config::Ini;
use crate::error::{invalid, Result};

/// Architecture of either neural decoder.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    Qecct(QecctConfig),
    Mlp(MlpConfig),
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Qecct(_) => "qecct",
            ModelSpec::Mlp(_) => "mlp",
        }
    }

    pub fn objective(&self) -> Objective {
        match self {
            ModelSpec::Qecct(c) => c.objective,
            ModelSpec::Mlp(c) => c.objective,
        }
    }

    pub fn objective_mut(&mut self) -> &mut Objective {
        match self {
            ModelSpec::Qecct(c) => &mut c.objective,
            ModelSpec::Mlp(c) => &mut c.objective,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Qecct(c) => c.validate(),
            ModelSpec::Mlp(c) => c.validate(),
        }
    }

    pub fn build<S: Scalar>(&self, view: SectorView, seed: u64) -> Result<AnyModel<S>> {
        Ok(match self {
            ModelSpec::Qecct(c) => AnyModel::Qecct(Qecct::new(c.clone(), view, seed)?),
            ModelSpec::Mlp(c) => AnyModel::Mlp(Mlp::new(c.clone(), view, seed)?),
        })
    }

    /// `key = value` pairs of the `[model]` section, every field spelled out.
    pub fn to_entries(&self) -> Vec<(&'static str, String)> {
        let o = self.objective();
        let mut out = vec![("kind", self.kind().to_string())];
        match self {
            ModelSpec::Qecct(c) => out.extend([
                ("n_layers", c.n_layers.to_string()),
                ("d_model", c.d_model.to_string()),
                ("heads", c.heads.to_string()),
                ("pooling_layer", c.pooling_layer.to_string()),
                ("use_g_omega", c.use_g_omega.to_string()),
                ("masked", c.masked.to_string()),
            ]),
            ModelSpec::Mlp(c) => out.extend([
                ("depth", c.depth.to_string()),
                ("width", c.width.to_string()),
                ("pooling_layer", c.pooling_layer.to_string()),
                ("use_g_omega", c.use_g_omega.to_string()),
            ]),
        }
        out.extend([
            ("bin_mode", o.bin_mode.to_string()),
            ("lambda_ber", o.lambda_ber.to_string()),
            ("lambda_ler", o.lambda_ler.to_string()),
            ("lambda_g", o.lambda_g.to_string()),
        ]);
        out
    }

    /// Reads the `[model]` section; absent keys take their defaults
    /// (QECCT `N = 6`, `d = 128`; MLP depth 10, width 256).
    pub fn from_ini(ini: &mut Ini) -> Result<Self> {
        const S: &str = "model";
        let kind = ini.take_or(S, "kind", "qecct".to_string())?;
        let mut spec = match kind.as_str() {
            "qecct" => {
                let n_layers = ini.take_or(S, "n_layers", 6usize)?;
                let d_model = ini.take_or(S, "d_model", 128usize)?;
                let mut c = QecctConfig::new(n_layers, d_model);
                c.heads = ini.take_or(S, "heads", c.heads)?;
                c.pooling_layer = ini.take_or(S, "pooling_layer", c.pooling_layer)?;
                c.use_g_omega = ini.take_or(S, "use_g_omega", true)?;
                c.masked = ini.take_or(S, "masked", true)?;
                ModelSpec::Qecct(c)
            }
            "mlp" => {
                let depth = ini.take_or(S, "depth", 10usize)?;
                let width = ini.take_or(S, "width", 256usize)?;
                let mut c = MlpConfig::new(depth, width);
                c.pooling_layer = ini.take_or(S, "pooling_layer", c.pooling_layer)?;
                c.use_g_omega = ini.take_or(S, "use_g_omega", true)?;
                ModelSpec::Mlp(c)
            }
            other => return Err(invalid(format!("unknown model kind {other:?}"))),
        };
        let d = Objective::default();
        let o = spec.objective_mut();
        o.bin_mode = ini.take_or::<BinMode>(S, "bin_mode", d.bin_mode)?;
        o.lambda_ber = ini.take_or(S, "lambda_ber", d.lambda_ber)?;
        o.lambda_ler = ini.take_or(S, "lambda_ler", d.lambda_ler)?;
        o.lambda_g = ini.take_or(S, "lambda_g", d.lambda_g)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Either neural decoder behind one type.
#[derive(Clone, Debug)]
pub enum AnyModel<S> {
    Qecct(Qecct<S>),
    Mlp(Mlp<S>),
}

impl<S: Scalar> AnyModel<S> {
    fn inner(&self) -> &dyn NeuralModel<S> {
        match self {
            AnyModel::Qecct(m) => m,
            AnyModel::Mlp(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn NeuralModel<S> {
        match self {
            AnyModel::Qecct(m) => m,
            AnyModel::Mlp(m) => m,
        }
    }
}

impl<S: Scalar> NeuralModel<S> for AnyModel<S> {
    fn kind(&self) -> &'static str {
        self.inner().kind()
    }

    fn view(&self) -> &SectorView {
        self.inner().view()
    }

    fn params(&self) -> &ParamStore<S> {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParamStore<S> {
        self.inner_mut().params_mut()
    }

    fn objective(&self) -> Objective {
        self.inner().objective()
    }

    fn forward(&self, tape: &mut Tape<S>, batch: &Batch<S>) -> Result<ModelOutput> {
        self.inner().forward(tape, batch)
    }
}
