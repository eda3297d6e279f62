//! Training loop for the neural decoders.
//!
//! Every step draws `p` uniformly from the configured range, samples a fresh
//! batch of runs and applies one Adam update. Randomness is derived from the
//! seed and the step index, and gradients are reduced over a fixed number of
//! shards in a fixed order, so a run is bit-identical however many threads
//! execute it.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::autodiff::{Adam, CosineSchedule, ParamStore, Tape};
use crate::codes::{parse_code_spec, Sector, SectorView, StabilizerCode};
use crate::config::{render, Ini};
use crate::error::{invalid, Error, Result};
use crate::model::{total_loss, AnyModel, Batch, ModelSpec, NeuralModel};
use crate::noise::{sample_run, Channel, StreamRng, SyndromeRun};

const TRAIN_STREAM: u64 = 0x7472_6169_6e;
const INIT_STREAM: u64 = 0x696e_6974;

/// File names inside a training output directory.
pub const CHECKPOINT_FILE: &str = "checkpoint.qckpt";
pub const MODEL_CONFIG_FILE: &str = "model.ini";
pub const LOG_FILE: &str = "train_log.csv";

/// Noise model of a training or evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseConfig {
    pub channel: Channel,
    pub p_min: f64,
    pub p_max: f64,
    /// Measurement rounds `T`; one round with `q = 0` means perfect syndromes.
    pub rounds: usize,
    pub q: f64,
}

impl NoiseConfig {
    /// Range `[0.05, 0.15]` for independent noise and `[0.10, 0.20]` for
    /// depolarizing noise, perfect measurements.
    pub fn default_for(channel: Channel) -> Self {
        let (p_min, p_max) = match channel {
            Channel::Depolarizing => (0.10, 0.20),
            _ => (0.05, 0.15),
        };
        Self {
            channel,
            p_min,
            p_max,
            rounds: 1,
            q: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel == Channel::External {
            return Err(invalid("training needs a channel that can be sampled"));
        }
        if !(self.p_min > 0.0 && self.p_min <= self.p_max && self.p_max < 1.0) {
            return Err(invalid(format!(
                "p range [{}, {}] must lie inside (0, 1)",
                self.p_min, self.p_max
            )));
        }
        if self.rounds == 0 {
            return Err(invalid("rounds must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.q) {
            return Err(invalid(format!("q = {} must lie in [0, 1)", self.q)));
        }
        Ok(())
    }
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Code spec such as `toric:4`.
    pub code: String,
    pub sector: Sector,
    pub noise: NoiseConfig,
    pub model: ModelSpec,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lr0: f64,
    pub lr_min: f64,
    /// Write a log row every this many steps.
    pub log_every: usize,
    /// Independent gradient shards per batch, reduced in order.
    pub grad_shards: usize,
}

impl TrainConfig {
    /// Defaults for a code and channel: the `x` sector for independent
    /// noise, the joint sector otherwise.
    pub fn new(code: &str, channel: Channel, model: ModelSpec) -> Self {
        Self {
            code: code.to_string(),
            sector: default_sector(channel),
            noise: NoiseConfig::default_for(channel),
            model,
            batch_size: 512,
            steps_per_epoch: 5000,
            epochs: 1,
            seed: 0,
            lr0: 5e-4,
            lr_min: 5e-7,
            log_every: 1,
            grad_shards: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        parse_code_spec(&self.code)?;
        self.noise.validate()?;
        self.model.validate()?;
        if self.batch_size == 0 || self.steps_per_epoch == 0 || self.epochs == 0 {
            return Err(invalid("batch_size, steps_per_epoch and epochs must be positive"));
        }
        if self.log_every == 0 || self.grad_shards == 0 {
            return Err(invalid("log_every and grad_shards must be positive"));
        }
        if !(self.lr0 > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr0) {
            return Err(invalid("learning rates need 0 <= lr_min <= lr0 and lr0 > 0"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.steps_per_epoch) as u64
    }

    pub fn schedule(&self) -> CosineSchedule {
        CosineSchedule {
            lr0: self.lr0,
            lr_min: self.lr_min,
            t_max: self.total_steps(),
        }
    }

    pub fn to_text(&self) -> String {
        render(&[
            (
                "code",
                vec![("code", self.code.clone()), ("sector", self.sector.name().to_string())],
            ),
            (
                "noise",
                vec![
                    ("channel", self.noise.channel.to_string()),
                    ("p_min", self.noise.p_min.to_string()),
                    ("p_max", self.noise.p_max.to_string()),
                    ("rounds", self.noise.rounds.to_string()),
                    ("q", self.noise.q.to_string()),
                ],
            ),
            ("model", self.model.to_entries()),
            (
                "train",
                vec![
                    ("batch_size", self.batch_size.to_string()),
                    ("steps_per_epoch", self.steps_per_epoch.to_string()),
                    ("epochs", self.epochs.to_string()),
                    ("seed", self.seed.to_string()),
                    ("lr0", self.lr0.to_string()),
                    ("lr_min", self.lr_min.to_string()),
                    ("log_every", self.log_every.to_string()),
                    ("grad_shards", self.grad_shards.to_string()),
                ],
            ),
        ])
    }

    /// Parses a config; only `[code] code` is required. With `q > 0` and no
    /// `rounds`, the run uses `L` rounds.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut ini = Ini::parse(text)?;
        let code: String = ini.take_required("code", "code")?;
        let channel: Channel = ini.take_or("noise", "channel", Channel::Independent)?;
        let sector = ini.take_or("code", "sector", default_sector(channel))?;
        let d = NoiseConfig::default_for(channel);
        let q = ini.take_or("noise", "q", d.q)?;
        // Faulty measurements default to T = L rounds.
        let rounds_default = if q > 0.0 { parse_code_spec(&code)?.distance() } else { d.rounds };
        let noise = NoiseConfig {
            channel,
            p_min: ini.take_or("noise", "p_min", d.p_min)?,
            p_max: ini.take_or("noise", "p_max", d.p_max)?,
            rounds: ini.take_or("noise", "rounds", rounds_default)?,
            q,
        };
        let model = ModelSpec::from_ini(&mut ini)?;
        let mut cfg = TrainConfig::new(&code, channel, model);
        cfg.sector = sector;
        cfg.noise = noise;
        cfg.batch_size = ini.take_or("train", "batch_size", cfg.batch_size)?;
        cfg.steps_per_epoch = ini.take_or("train", "steps_per_epoch", cfg.steps_per_epoch)?;
        cfg.epochs = ini.take_or("train", "epochs", cfg.epochs)?;
        cfg.seed = ini.take_or("train", "seed", cfg.seed)?;
        cfg.lr0 = ini.take_or("train", "lr0", cfg.lr0)?;
        cfg.lr_min = ini.take_or("train", "lr_min", cfg.lr_min)?;
        cfg.log_every = ini.take_or("train", "log_every", cfg.log_every)?;
        cfg.grad_shards = ini.take_or("train", "grad_shards", cfg.grad_shards)?;
        ini.finish(&["code", "noise", "model", "train"])?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn build_code(&self) -> Result<StabilizerCode> {
        parse_code_spec(&self.code)
    }

    pub fn build_model(&self) -> Result<(StabilizerCode, AnyModel<f32>)> {
        let code = self.build_code()?;
        let view = code.view(self.sector);
        let model = self.model.build(view, derive_u64(self.seed, INIT_STREAM))?;
        Ok((code, model))
    }
}

fn default_sector(channel: Channel) -> Sector {
    match channel {
        Channel::Independent => Sector::X,
        _ => Sector::Joint,
    }
}

fn derive_u64(seed: u64, stream: u64) -> u64 {
    StreamRng::derive(seed, &[stream]).random()
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub epoch: usize,
    pub p: f64,
    pub lr: f64,
    pub loss: f64,
    pub ber_loss: f64,
    pub ler_loss: f64,
    /// `None` when the initial estimator is ablated.
    pub g_loss: Option<f64>,
    pub grad_norm: f64,
}

pub const LOG_HEADER: &str = "step,epoch,p,lr,loss,ber_loss,ler_loss,g_loss,grad_norm";

impl LogRow {
    pub fn to_csv(&self) -> String {
        let g = self.g_loss.map(|g| g.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step, self.epoch, self.p, self.lr, self.loss, self.ber_loss, self.ler_loss, g, self.grad_norm
        )
    }
}

/// State after training, including a partial run cut short by a failure.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: AnyModel<f32>,
    pub log: Vec<LogRow>,
    /// Mean total loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// Runs of one training step.
pub fn sample_batch(
    code: &StabilizerCode,
    noise: &NoiseConfig,
    seed: u64,
    step: u64,
    batch_size: usize,
) -> Result<(f64, Vec<SyndromeRun>)> {
    let mut rng = StreamRng::derive(seed, &[TRAIN_STREAM, step]);
    let p = if noise.p_min == noise.p_max {
        noise.p_min
    } else {
        rng.random_range(noise.p_min..noise.p_max)
    };
    let runs = (0..batch_size as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = StreamRng::derive(seed, &[TRAIN_STREAM, step, i + 1]);
            sample_run(code, noise.channel, p, noise.q, noise.rounds, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((p, runs))
}

struct StepStats {
    loss: f64,
    ber: f64,
    ler: f64,
    g: Option<f64>,
}

/// Fills the gradients of `model` for one batch and returns the loss terms.
fn accumulate_gradients(model: &mut AnyModel<f32>, view: &SectorView, runs: &[SyndromeRun], shards: usize) -> Result<StepStats> {
    let chunk = runs.len().div_ceil(shards.min(runs.len()).max(1));
    let total = runs.len() as f64;
    let objective = model.objective();
    let frozen: &AnyModel<f32> = model;
    let parts = runs
        .par_chunks(chunk)
        .map(|part| -> Result<(StepStats, ParamStore<f32>)> {
            let batch = Batch::<f32>::from_runs(view, part)?;
            let mut tape = Tape::new();
            let out = frozen.forward(&mut tape, &batch)?;
            let terms = total_loss(&mut tape, &objective, &view.logicals, &out, &batch)?;
            let weight = part.len() as f64 / total;
            let scaled = tape.affine(terms.total, weight, 0.0);
            let mut grads = frozen.params().clone();
            grads.zero_grad();
            tape.backward(scaled, &mut grads)?;
            let v = |x| tape.value(x).item() as f64 * weight;
            Ok((
                StepStats {
                    loss: v(terms.total),
                    ber: v(terms.ber),
                    ler: v(terms.ler),
                    g: terms.g.map(v),
                },
                grads,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let store = model.params_mut();
    store.zero_grad();
    let mut stats = StepStats {
        loss: 0.0,
        ber: 0.0,
        ler: 0.0,
        g: None,
    };
    for (s, grads) in &parts {
        stats.loss += s.loss;
        stats.ber += s.ber;
        stats.ler += s.ler;
        stats.g = s.g.map(|g| stats.g.unwrap_or(0.0) + g);
        for id in grads.ids() {
            store.grad_mut(id).add_assign(grads.grad(id));
        }
    }
    Ok(stats)
}

/// Writes `<dir>/checkpoint.qckpt` and `<dir>/model.ini`, each through a
/// temporary file so a crash never leaves a torn checkpoint.
pub fn save_checkpoint(dir: &Path, cfg: &TrainConfig, model: &AnyModel<f32>) -> Result<()> {
    let mut bytes = Vec::new();
    model.params().save(&mut bytes)?;
    write_atomic(&dir.join(CHECKPOINT_FILE), &bytes)?;
    write_atomic(&dir.join(MODEL_CONFIG_FILE), cfg.to_text().as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint and the `model.ini` stored next to it.
pub fn load_checkpoint(path: &Path) -> Result<(TrainConfig, StabilizerCode, AnyModel<f32>)> {
    let file = if path.is_dir() { path.join(CHECKPOINT_FILE) } else { path.to_path_buf() };
    if !file.is_file() {
        return Err(Error::NotFound(format!("checkpoint {}", file.display())));
    }
    let cfg_path = file.with_file_name(MODEL_CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path)
        .map_err(|_| Error::NotFound(format!("model config {}", cfg_path.display())))?;
    let cfg = TrainConfig::from_text(&text)?;
    let (code, mut model) = cfg.build_model()?;
    let stored = ParamStore::<f32>::load(&mut std::io::BufReader::new(File::open(&file)?))?;
    model.params_mut().load_values_from(&stored)?;
    Ok((cfg, code, model))
}

/// Step-by-step training state.
pub struct Trainer {
    cfg: TrainConfig,
    code: StabilizerCode,
    view: SectorView,
    model: AnyModel<f32>,
    adam: Adam<f32>,
    step: u64,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (code, model) = cfg.build_model()?;
        let view = model.view().clone();
        let adam = Adam::new(model.params(), cfg.schedule());
        Ok(Self {
            cfg: cfg.clone(),
            code,
            view,
            model,
            adam,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn code(&self) -> &StabilizerCode {
        &self.code
    }

    pub fn model(&self) -> &AnyModel<f32> {
        &self.model
    }

    pub fn into_model(self) -> AnyModel<f32> {
        self.model
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    /// Samples a batch and applies one update. On a numeric failure the
    /// parameters are left as they were before the step.
    pub fn step(&mut self) -> Result<LogRow> {
        let step = self.step;
        let (p, runs) = sample_batch(&self.code, &self.cfg.noise, self.cfg.seed, step, self.cfg.batch_size)?;
        let lr = self.adam.current_lr();
        let stats = accumulate_gradients(&mut self.model, &self.view, &runs, self.cfg.grad_shards)?;
        let grad_norm = self.model.params().grad_norm();
        if !grad_norm.is_finite() {
            return Err(Error::NumericFailure(format!("gradient norm is {grad_norm} at step {step}")));
        }
        self.adam.step(self.model.params_mut());
        self.step += 1;
        Ok(LogRow {
            step,
            epoch: (step / self.cfg.steps_per_epoch as u64) as usize,
            p,
            lr,
            loss: stats.loss,
            ber_loss: stats.ber,
            ler_loss: stats.ler,
            g_loss: stats.g,
            grad_norm,
        })
    }
}

/// Trains from scratch. With `out_dir`, the log is written as it grows and a
/// checkpoint is saved at the end of every epoch; a numeric failure returns
/// an error and leaves the last checkpoint in place.
pub fn train(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    train_with(cfg, out_dir, |_| {})
}

/// [`train`] with a callback after every logged row.
pub fn train_with(cfg: &TrainConfig, out_dir: Option<&Path>, mut on_log: impl FnMut(&LogRow)) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg)?;
    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path: PathBuf = dir.join(LOG_FILE);
            let mut f = BufWriter::new(OpenOptions::new().create(true).write(true).truncate(true).open(path)?);
            writeln!(f, "{LOG_HEADER}")?;
            Some(f)
        }
        None => None,
    };
    let mut log = Vec::new();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut sum = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let row = match trainer.step() {
                Ok(row) => row,
                Err(e) => {
                    if let Some(f) = log_file.as_mut() {
                        f.flush()?;
                    }
                    return Err(e);
                }
            };
            sum += row.loss;
            if row.step % cfg.log_every as u64 == 0 {
                if let Some(f) = log_file.as_mut() {
                    writeln!(f, "{}", row.to_csv())?;
                }
                on_log(&row);
                log.push(row);
            }
        }
        epoch_losses.push(sum / cfg.steps_per_epoch as f64);
        if let Some(dir) = out_dir {
            if let Some(f) = log_file.as_mut() {
                f.flush()?;
            }
            save_checkpoint(dir, cfg, trainer.model())?;
        }
    }
    if let Some(f) = log_file.as_mut() {
        f.flush()?;
    }
    let steps = trainer.steps_done();
    Ok(TrainOutcome {
        model: trainer.into_model(),
        log,
        epoch_losses,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MlpConfig, QecctConfig};

    fn tiny(kind: &str) -> TrainConfig {
        let model = match kind {
            "mlp" => ModelSpec::Mlp(MlpConfig::new(2, 16)),
            _ => ModelSpec::Qecct(QecctConfig {
                heads: 2,
                ..QecctConfig::new(1, 8)
            }),
        };
        let mut cfg = TrainConfig::new("toric:3", Channel::Independent, model);
        cfg.batch_size = 8;
        cfg.steps_per_epoch = 3;
        cfg.epochs = 2;
        cfg.seed = 5;
        cfg
    }

    #[test]
    fn config_text_round_trips() {
        for kind in ["qecct", "mlp"] {
            let mut cfg = tiny(kind);
            cfg.noise.rounds = 3;
            cfg.noise.q = 0.02;
            cfg.sector = Sector::Z;
            let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn config_defaults_and_errors() {
        let cfg = TrainConfig::from_text("[code]\ncode = surface:3\n[noise]\nchannel = depolarizing\n").unwrap();
        assert_eq!(cfg.sector, Sector::Joint);
        assert_eq!((cfg.noise.p_min, cfg.noise.p_max), (0.10, 0.20));
        assert_eq!((cfg.batch_size, cfg.steps_per_epoch), (512, 5000));
        assert_eq!(cfg.noise.rounds, 1);
        let faulty = TrainConfig::from_text("[code]\ncode = toric:5\n[noise]\nq = 0.01\n").unwrap();
        assert_eq!(faulty.noise.rounds, 5);
        for bad in [
            "[code]\ncode = toric:4\n[train]\nbatchsize = 3\n",
            "[code]\ncode = toric:4\n[noise]\np_min = 0.2\np_max = 0.1\n",
            "[code]\ncode = toric:4\n[noise]\np_max = 1.0\n",
            "[code]\ncode = toric:4\n[train]\nbatch_size = 0\n",
            "[code]\ncode = toric:4\n[extra]\n",
            "[noise]\nchannel = independent\n",
        ] {
            assert!(TrainConfig::from_text(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn identical_configs_give_identical_runs() {
        for kind in ["qecct", "mlp"] {
            let cfg = tiny(kind);
            let a = train(&cfg, None).unwrap();
            let b = train(&cfg, None).unwrap();
            assert_eq!(a.log, b.log);
            assert_eq!(a.steps, 6);
            let bits = |o: &TrainOutcome| {
                let mut buf = Vec::new();
                o.model.params().save(&mut buf).unwrap();
                buf
            };
            assert_eq!(bits(&a), bits(&b));
        }
    }

    #[test]
    fn thread_count_does_not_change_the_run() {
        let cfg = tiny("qecct");
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| train(&cfg, None).unwrap().log)
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn shards_only_reorder_the_sum() {
        let mut a = tiny("qecct");
        a.grad_shards = 1;
        let mut b = a.clone();
        b.grad_shards = 3;
        let (la, lb) = (train(&a, None).unwrap().log, train(&b, None).unwrap().log);
        for (x, y) in la.iter().zip(&lb) {
            assert!((x.loss - y.loss).abs() <= 1e-5 * x.loss, "{x:?} {y:?}");
            assert!((x.grad_norm - y.grad_norm).abs() <= 1e-4 * x.grad_norm, "{x:?} {y:?}");
        }
    }

    #[test]
    fn writes_log_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny("qecct");
        let outcome = train(&cfg, Some(dir.path())).unwrap();
        let log = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines[0], LOG_HEADER);
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[1], outcome.log[0].to_csv());
        let (back_cfg, _, model) = load_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(back_cfg, cfg);
        for id in model.params().ids() {
            assert_eq!(model.params().value(id), outcome.model.params().value(id));
        }
        assert!(matches!(load_checkpoint(&dir.path().join("nope.qckpt")), Err(Error::NotFound(_))));
    }

    #[test]
    fn sampled_p_stays_in_range() {
        let cfg = tiny("mlp");
        let code = cfg.build_code().unwrap();
        for step in 0..50 {
            let (p, runs) = sample_batch(&code, &cfg.noise, 1, step, 4).unwrap();
            assert!((0.05..0.15).contains(&p));
            assert_eq!(runs.len(), 4);
        }
    }
}
