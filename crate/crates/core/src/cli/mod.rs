//! The `qecc-lab` command line.
//!
//! Exit status is 0 on success, 2 on a usage error and 1 when the command
//! itself fails. `QECC_THREADS` caps the number of worker threads. Commands
//! that write files also write a manifest next to their output (see
//! [`manifest`]); `replay --manifest` reruns such a command and compares the
//! digests of what it writes.

pub mod manifest;
mod selftest;

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::codes::{parse_code_spec, write_code_file, CodeFamily, Sector, StabilizerCode};
use crate::dataset::{read_dataset, sample_runs, write_dataset, DatasetHeader};
use crate::error::Error;
use crate::eval::{evaluate, with_threads, Decoder, EvalPlan, IdentityDecoder, MwpmEval, NeuralEval};
use crate::model::NeuralModel;
use crate::mwpm::MwpmDecoder;
use crate::noise::Channel;
use crate::plot::{render_curves, Metric, PlotOptions};
use crate::report::{curves_by_series, estimate_threshold, parse_csv, rows_to_csv, ReportRow, Threshold};
use crate::train::{self, TrainConfig, CHECKPOINT_FILE, LOG_FILE, MODEL_CONFIG_FILE};

use manifest::{sha256_file, Manifest};

/// Name of the manifest written inside a training directory.
pub const TRAIN_MANIFEST: &str = "run.manifest";
/// Verbatim copy of the training config inside the output directory.
pub const CONFIG_ECHO: &str = "config.txt";

#[derive(Parser, Debug)]
#[command(name = "qecc-lab", version, about = "Stabilizer codes, syndrome sampling, matching and neural decoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build or export a stabilizer code.
    #[command(subcommand)]
    Code(CodeCommand),
    /// Sample syndrome runs into a QSYN dataset.
    Sample(SampleArgs),
    /// Decode a dataset.
    #[command(subcommand)]
    Decode(DecodeCommand),
    /// Train a neural decoder from a config file.
    Train(TrainArgs),
    /// Estimate BER and LER of a decoder over a grid of error rates.
    Eval(EvalArgs),
    /// Estimate thresholds from report CSVs.
    Threshold(ThresholdArgs),
    /// Render report CSVs as an SVG figure.
    Plot(PlotArgs),
    /// Run the built-in invariant checks.
    Selftest(SelftestArgs),
    /// Rerun a command from its manifest and compare its outputs.
    Replay(ReplayArgs),
}

#[derive(Subcommand, Debug)]
enum CodeCommand {
    /// Write H, the logical matrix, the mask and the geometry to a file.
    Export(ExportArgs),
    /// Print the dimensions of a code.
    Info(InfoArgs),
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    family: CodeFamily,
    #[arg(long = "L", value_name = "L")]
    l: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InfoArgs {
    #[arg(long)]
    family: CodeFamily,
    #[arg(long = "L", value_name = "L")]
    l: usize,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Code such as `toric:4` or `surface:5`.
    #[arg(long)]
    code: String,
    #[arg(long)]
    channel: Channel,
    #[arg(long)]
    p: f64,
    /// Measurement flip rate; defaults to `p` when `T > 1` and 0 otherwise.
    #[arg(long)]
    q: Option<f64>,
    /// Syndrome rounds; defaults to `L` when `--q` is positive and 1 otherwise.
    #[arg(long = "T", value_name = "T")]
    rounds: Option<usize>,
    #[arg(long)]
    n_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum DecodeCommand {
    /// Minimum-weight perfect matching; writes one row per sample.
    Mwpm(DecodeArgs),
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    code: String,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "joint")]
    sector: Sector,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the checkpoint, log and manifest.
    #[arg(long, default_value = "train_out")]
    out: PathBuf,
    /// Overrides `[train] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Print a progress line every this many logged steps (0 for none).
    #[arg(long, default_value_t = 100)]
    progress: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// `mwpm`, `identity`, or `neural` (also `qecct`, `mlp`) with a checkpoint.
    #[arg(long)]
    decoder: String,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Code such as `toric:4`; taken from the checkpoint for neural decoders.
    #[arg(long)]
    code: Option<String>,
    #[arg(long)]
    sector: Option<Sector>,
    #[arg(long)]
    channel: Option<Channel>,
    #[arg(long, num_args = 1.., required = true)]
    p: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Syndrome rounds; taken from the checkpoint for neural decoders, else
    /// `L` when `--q` is positive and 1 otherwise.
    #[arg(long = "T", value_name = "T")]
    rounds: Option<usize>,
    /// Measurement flip rate; defaults to `p` when `T > 1` and 0 otherwise.
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ThresholdArgs {
    #[arg(long = "in", num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    #[arg(long = "in", num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// `ler` or `ber`.
    #[arg(long, default_value = "ler")]
    metric: Metric,
    /// Mark the estimated threshold of each series.
    #[arg(long)]
    thresholds: bool,
    #[arg(long)]
    title: Option<String>,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
}

/// Failure of a command, split by exit status.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

type CmdResult<T = ()> = std::result::Result<T, Failure>;

/// Output streams of a command.
pub struct Io<'a> {
    pub out: &'a mut (dyn Write + Send),
    pub err: &'a mut (dyn Write + Send),
}

/// Runs the command line `argv` (program name first) and returns the exit status.
pub fn run(argv: &[String], io: &mut Io<'_>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(io.out, "{text}") } else { write!(io.err, "{text}") };
            return code;
        }
    };
    let threads = match std::env::var("QECC_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => {
                let _ = writeln!(io.err, "error: QECC_THREADS must be a positive integer, got {v:?}");
                return 2;
            }
        },
        Err(_) => None,
    };
    let args: Vec<String> = argv.iter().skip(1).cloned().collect();
    let result = with_threads(threads, || dispatch(cli.command, &args, io)).unwrap_or_else(|e| Err(e.into()));
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(io.err, "error: {msg}\n\nUsage: qecc-lab <COMMAND> [OPTIONS]; see qecc-lab --help");
            2
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(io.err, "error: {e}");
            1
        }
    }
}

fn dispatch(command: Command, args: &[String], io: &mut Io<'_>) -> CmdResult {
    match command {
        Command::Code(CodeCommand::Export(a)) => code_export(a, args),
        Command::Code(CodeCommand::Info(a)) => code_info(a, io),
        Command::Sample(a) => sample(a, args, io),
        Command::Decode(DecodeCommand::Mwpm(a)) => decode_mwpm(a, args, io),
        Command::Train(a) => train_cmd(a, args, io),
        Command::Eval(a) => eval_cmd(a, args, io),
        Command::Threshold(a) => threshold(a, io),
        Command::Plot(a) => plot(a, args),
        Command::Selftest(a) => selftest::run(a.seed, io),
        Command::Replay(a) => replay(a, io),
    }
}

fn code_arg(spec: &str) -> CmdResult<StabilizerCode> {
    parse_code_spec(spec).map_err(|e| usage(e.to_string()))
}

fn build_code(family: CodeFamily, l: usize) -> CmdResult<StabilizerCode> {
    StabilizerCode::build(family, l).map_err(|e| usage(e.to_string()))
}

fn check_rate(name: &str, v: f64) -> CmdResult {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(usage(format!("--{name} {v} is outside [0, 1]")))
    }
}

fn default_rounds(q: Option<f64>, code: &StabilizerCode) -> usize {
    if q.is_some_and(|q| q > 0.0) {
        code.distance()
    } else {
        1
    }
}

fn default_q(rounds: usize, p: f64) -> f64 {
    if rounds > 1 {
        p
    } else {
        0.0
    }
}

/// `<out>.manifest`.
fn manifest_path_for(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

struct Recorder {
    manifest: Manifest,
    start: Instant,
}

impl Recorder {
    fn new(command: &str, args: &[String]) -> CmdResult<Self> {
        Ok(Self {
            manifest: Manifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                cwd: std::env::current_dir()?,
                argv: args.to_vec(),
                ..Manifest::default()
            },
            start: Instant::now(),
        })
    }

    fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    fn code(&mut self, code: &StabilizerCode) {
        self.manifest.code = Some((code.label(), code.hash()));
    }

    fn config(&mut self, key: &str, value: impl ToString) {
        self.manifest.config.push((key.to_string(), value.to_string()));
    }

    fn input(&mut self, path: &Path) -> CmdResult {
        let h = sha256_file(path)?;
        self.manifest.inputs.push((path.display().to_string(), h));
        Ok(())
    }

    fn output(&mut self, path: &Path) -> CmdResult {
        let h = sha256_file(path)?;
        self.manifest.outputs.push((path.display().to_string(), h));
        Ok(())
    }

    fn write(mut self, path: &Path) -> CmdResult {
        self.manifest.wall_clock_s = self.start.elapsed().as_secs_f64();
        fs::write(path, self.manifest.to_text())?;
        Ok(())
    }
}

fn code_export(a: ExportArgs, args: &[String]) -> CmdResult {
    let code = build_code(a.family, a.l)?;
    let mut rec = Recorder::new("code export", args)?;
    rec.code(&code);
    let mut buf = Vec::new();
    write_code_file(&code, &mut buf)?;
    fs::write(&a.out, buf)?;
    rec.output(&a.out)?;
    rec.write(&manifest_path_for(&a.out))
}

fn code_info(a: InfoArgs, io: &mut Io<'_>) -> CmdResult {
    let code = build_code(a.family, a.l)?;
    writeln!(
        io.out,
        "{} n={} n_s={} n_err={} logical_rows={} H={}x{} rank={} hash={:016x}",
        code.label(),
        code.n(),
        code.n_s(),
        code.n_err(),
        code.n_logical(),
        code.parity_check().rows(),
        code.parity_check().cols(),
        code.parity_check().rank(),
        code.hash()
    )?;
    Ok(())
}

fn sample(a: SampleArgs, args: &[String], io: &mut Io<'_>) -> CmdResult {
    let code = code_arg(&a.code)?;
    if a.channel == Channel::External {
        return Err(usage("the external channel cannot be sampled"));
    }
    let rounds = a.rounds.unwrap_or(default_rounds(a.q, &code));
    if rounds == 0 {
        return Err(usage("--T must be at least 1"));
    }
    let q = a.q.unwrap_or(default_q(rounds, a.p));
    check_rate("p", a.p)?;
    check_rate("q", q)?;
    let mut rec = Recorder::new("sample", args)?;
    rec.seed(a.seed);
    rec.code(&code);
    for (k, v) in [
        ("channel", a.channel.to_string()),
        ("p", a.p.to_string()),
        ("q", q.to_string()),
        ("rounds", rounds.to_string()),
        ("n_samples", a.n_samples.to_string()),
    ] {
        rec.config(k, v);
    }
    let runs = sample_runs(&code, a.channel, a.p, q, rounds, a.n_samples, a.seed)?;
    let header = DatasetHeader::for_code(&code, a.channel, a.p, q, rounds, runs.len());
    let mut w = std::io::BufWriter::new(fs::File::create(&a.out)?);
    write_dataset(&mut w, &header, &runs)?;
    w.flush()?;
    drop(w);
    rec.output(&a.out)?;
    rec.write(&manifest_path_for(&a.out))?;
    writeln!(io.out, "wrote {} runs to {}", runs.len(), a.out.display())?;
    Ok(())
}

fn decode_mwpm(a: DecodeArgs, args: &[String], io: &mut Io<'_>) -> CmdResult {
    let code = code_arg(&a.code)?;
    let mut rec = Recorder::new("decode mwpm", args)?;
    rec.code(&code);
    rec.config("sector", a.sector.name());
    rec.input(&a.dataset)?;
    let (header, runs) = read_dataset(&mut BufReader::new(fs::File::open(&a.dataset)?))?;
    if !header.matches(&code) {
        return Err(Failure::Runtime(crate::error::invalid(format!(
            "dataset {} was not sampled from {}",
            a.dataset.display(),
            code.label()
        ))));
    }
    let decoder = MwpmDecoder::new(&code, a.sector)?;
    let view = code.view(a.sector);
    let estimates = {
        use rayon::prelude::*;
        runs.par_iter()
            .map(|r| decoder.decode_rounds(&r.syndromes))
            .collect::<crate::Result<Vec<_>>>()?
    };
    let mut csv = String::from("sample,weight,logical_class,failure\n");
    let mut failures = 0usize;
    for (i, (run, est)) in runs.iter().zip(&estimates).enumerate() {
        let mut residual = view.error_slice(&run.cumulative_error);
        residual.xor_assign(est)?;
        let class = view.logicals.matvec(&residual)?;
        let failed = !class.is_zero();
        failures += failed as usize;
        let bits: String = class.to_bits().iter().map(|b| if *b == 1 { '1' } else { '0' }).collect();
        csv.push_str(&format!("{i},{},{bits},{}\n", est.weight(), failed as u8));
    }
    fs::write(&a.out, csv)?;
    rec.output(&a.out)?;
    rec.write(&manifest_path_for(&a.out))?;
    let n = runs.len().max(1);
    writeln!(
        io.out,
        "{} runs, {} logical failures (LER {:.4})",
        runs.len(),
        failures,
        failures as f64 / n as f64
    )?;
    Ok(())
}

fn train_cmd(a: TrainArgs, args: &[String], io: &mut Io<'_>) -> CmdResult {
    let text = fs::read_to_string(&a.config)
        .map_err(|e| usage(format!("cannot read config {}: {e}", a.config.display())))?;
    let mut cfg = TrainConfig::from_text(&text).map_err(|e| usage(format!("{}: {e}", a.config.display())))?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let code = cfg.build_code()?;
    let mut rec = Recorder::new("train", args)?;
    rec.seed(cfg.seed);
    rec.code(&code);
    rec.input(&a.config)?;
    let mut ini = crate::config::Ini::parse(&cfg.to_text())?;
    for section in ["code", "noise", "model", "train"] {
        for (k, v) in ini.take_section(section) {
            rec.config(&format!("{section}.{k}"), v);
        }
    }
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join(CONFIG_ECHO), &text)?;
    let total = cfg.total_steps();
    let progress = a.progress;
    let mut logged = 0u64;
    let out = &mut *io.out;
    let outcome = train::train_with(&cfg, Some(&a.out), |row| {
        logged += 1;
        if progress > 0 && (logged % progress == 0 || row.step + 1 == total) {
            let _ = writeln!(
                out,
                "step {}/{} loss {:.5} ber {:.5} ler {:.5} lr {:.2e}",
                row.step + 1,
                total,
                row.loss,
                row.ber_loss,
                row.ler_loss,
                row.lr
            );
        }
    })?;
    for name in [CONFIG_ECHO, CHECKPOINT_FILE, MODEL_CONFIG_FILE, LOG_FILE] {
        rec.output(&a.out.join(name))?;
    }
    rec.write(&a.out.join(TRAIN_MANIFEST))?;
    writeln!(
        io.out,
        "trained {} steps; epoch losses {:?}; checkpoint in {}",
        outcome.steps,
        outcome.epoch_losses,
        a.out.display()
    )?;
    Ok(())
}

fn eval_cmd(a: EvalArgs, args: &[String], io: &mut Io<'_>) -> CmdResult {
    let mut rec = Recorder::new("eval", args)?;
    rec.seed(a.seed);
    let kind = a.decoder.to_ascii_lowercase();
    let (code, decoder, channel, rounds): (StabilizerCode, Box<dyn Decoder>, Channel, usize) = match kind.as_str() {
        "mwpm" | "identity" => {
            if a.checkpoint.is_some() {
                return Err(usage(format!("--checkpoint is not used by the {kind} decoder")));
            }
            let spec = a.code.as_deref().ok_or_else(|| usage(format!("--code is required for the {kind} decoder")))?;
            let code = code_arg(spec)?;
            let channel = a.channel.unwrap_or(Channel::Independent);
            let sector = a.sector.unwrap_or(match channel {
                Channel::Independent => Sector::X,
                _ => Sector::Joint,
            });
            let decoder: Box<dyn Decoder> = if kind == "mwpm" {
                Box::new(MwpmEval::new(&code, sector)?)
            } else {
                Box::new(IdentityDecoder(code.view(sector)))
            };
            let rounds = a.rounds.unwrap_or(default_rounds(a.q, &code));
            (code, decoder, channel, rounds)
        }
        "neural" | "qecct" | "mlp" => {
            let path = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| usage(format!("--checkpoint is required for the {kind} decoder")))?;
            let (cfg, code, model) = train::load_checkpoint(path)?;
            let file = resolve_checkpoint(path);
            rec.input(&file)?;
            rec.input(&file.with_file_name(MODEL_CONFIG_FILE))?;
            if kind != "neural" && model.kind() != kind {
                return Err(usage(format!("checkpoint holds a {} model, not {kind}", model.kind())));
            }
            if let Some(spec) = &a.code {
                if code_arg(spec)?.hash() != code.hash() {
                    return Err(usage(format!("checkpoint was trained on {}, not {spec}", code.label())));
                }
            }
            if a.sector.is_some_and(|s| s != cfg.sector) {
                return Err(usage(format!("checkpoint decodes the {} sector", cfg.sector.name())));
            }
            let channel = a.channel.unwrap_or(cfg.noise.channel);
            let rounds = a.rounds.unwrap_or(cfg.noise.rounds);
            (code, Box::new(NeuralEval::new(model)), channel, rounds)
        }
        other => return Err(usage(format!("unknown decoder {other:?} (mwpm, identity, neural, qecct, mlp)"))),
    };
    if channel == Channel::External {
        return Err(usage("the external channel cannot be sampled"));
    }
    if rounds == 0 || a.samples == 0 {
        return Err(usage("--T and --samples must be positive"));
    }
    for &p in &a.p {
        check_rate("p", p)?;
    }
    if let Some(q) = a.q {
        check_rate("q", q)?;
    }
    rec.code(&code);
    for (k, v) in [
        ("decoder", decoder.name()),
        ("sector", decoder.view().sector.name().to_string()),
        ("channel", channel.to_string()),
        ("rounds", rounds.to_string()),
        ("q", a.q.map_or("default".to_string(), |q| q.to_string())),
        ("samples", a.samples.to_string()),
        ("p", a.p.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")),
    ] {
        rec.config(k, v);
    }
    let mut rows: Vec<ReportRow> = Vec::with_capacity(a.p.len());
    for &p in &a.p {
        let plan = EvalPlan {
            channel,
            rounds,
            q: a.q.unwrap_or(default_q(rounds, p)),
            ps: vec![p],
            samples: a.samples,
            seed: a.seed,
        };
        let report = evaluate(decoder.as_ref(), &code, &plan)?;
        for r in &report.rows {
            writeln!(
                io.out,
                "{} {} p={} LER {:.5} [{:.5}, {:.5}] BER {:.5}",
                r.decoder, code.label(), r.p, r.ler, r.ler_lo, r.ler_hi, r.ber
            )?;
        }
        rows.extend(report.rows);
    }
    fs::write(&a.out, rows_to_csv(&rows))?;
    rec.output(&a.out)?;
    rec.write(&manifest_path_for(&a.out))
}

fn resolve_checkpoint(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(CHECKPOINT_FILE)
    } else {
        path.to_path_buf()
    }
}

fn read_reports(paths: &[PathBuf]) -> CmdResult<Vec<ReportRow>> {
    if paths.is_empty() {
        return Err(usage("at least one --in file is required"));
    }
    let mut rows = Vec::new();
    for p in paths {
        let text = fs::read_to_string(p).map_err(|e| usage(format!("cannot read {}: {e}", p.display())))?;
        rows.extend(parse_csv(&text).map_err(|e| Failure::Runtime(crate::error::invalid(format!("{}: {e}", p.display()))))?);
    }
    Ok(rows)
}

fn threshold(a: ThresholdArgs, io: &mut Io<'_>) -> CmdResult {
    let rows = read_reports(&a.inputs)?;
    for (key, curves) in curves_by_series(&rows) {
        let sizes: Vec<String> = curves.iter().map(|c| c.l.to_string()).collect();
        match estimate_threshold(&curves) {
            Ok(Threshold::Found { p, spread, crossings }) => {
                let pairs: Vec<String> = crossings
                    .iter()
                    .map(|c| format!("{}/{}@{:.4}", c.l_small, c.l_large, c.p))
                    .collect();
                writeln!(
                    io.out,
                    "{key} L={{{}}}: threshold {p:.4} (spread {spread:.4}; {})",
                    sizes.join(","),
                    pairs.join(" ")
                )?;
            }
            Ok(Threshold::NotFound) => writeln!(io.out, "{key} L={{{}}}: no crossing found", sizes.join(","))?,
            Err(e) => writeln!(io.out, "{key} L={{{}}}: no estimate ({e})", sizes.join(","))?,
        }
    }
    Ok(())
}

fn plot(a: PlotArgs, args: &[String]) -> CmdResult {
    let rows = read_reports(&a.inputs)?;
    let mut rec = Recorder::new("plot", args)?;
    for p in &a.inputs {
        rec.input(p)?;
    }
    let opts = PlotOptions {
        metric: a.metric,
        thresholds: a.thresholds,
        title: a.title,
    };
    let svg = render_curves(&rows, &opts)?;
    fs::write(&a.out, svg)?;
    rec.output(&a.out)?;
    rec.write(&manifest_path_for(&a.out))
}

fn replay(a: ReplayArgs, io: &mut Io<'_>) -> CmdResult {
    let text = fs::read_to_string(&a.manifest)
        .map_err(|e| usage(format!("cannot read manifest {}: {e}", a.manifest.display())))?;
    let m = Manifest::parse(&text)?;
    if m.argv.first().map(String::as_str) == Some("replay") {
        return Err(usage("a replay cannot be replayed"));
    }
    std::env::set_current_dir(&m.cwd)?;
    for (path, hash) in &m.inputs {
        let now = sha256_file(Path::new(path))?;
        if &now != hash {
            return Err(Failure::Runtime(crate::error::invalid(format!(
                "input {path} changed since the recorded run"
            ))));
        }
    }
    let mut argv = vec!["qecc-lab".to_string()];
    argv.extend(m.argv.iter().cloned());
    let cli = Cli::try_parse_from(&argv).map_err(|e| usage(format!("recorded arguments no longer parse: {e}")))?;
    dispatch(cli.command, &m.argv, io)?;
    let mut differing = Vec::new();
    for (path, hash) in &m.outputs {
        let now = sha256_file(Path::new(path))?;
        let same = &now == hash;
        writeln!(io.out, "{} {path}", if same { "identical" } else { "DIFFERS" })?;
        if !same {
            differing.push(path.clone());
        }
    }
    if differing.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(Error::NumericFailure(format!(
            "replay produced different bytes for {}",
            differing.join(", ")
        ))))
    }
}
