//! Monte-Carlo estimates of bit and logical error rates.
//!
//! Sample `i` at error rate `p` always draws from the stream
//! `(seed, p, i)`, and samples are decoded in fixed-size chunks whose integer
//! counts are summed. Results are therefore identical for any thread count
//! and any split of the sample range.

use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;

use crate::autodiff::Tape;
use crate::codes::{Sector, SectorView, StabilizerCode};
use crate::error::{invalid, Result};
use crate::gf2::BitVector;
use crate::model::{hard_decisions, AnyModel, Batch, NeuralModel};
use crate::mwpm::MwpmDecoder;
use crate::noise::{sample_run, Channel, StreamRng, SyndromeRun};
use crate::report::{ReportRow, DecodeReport};

const EVAL_STREAM: u64 = 0x6576_616c;

/// Samples decoded together; part of the sampling contract, not a tuning knob.
pub const CHUNK: usize = 256;

/// Anything that maps syndrome runs to an estimate of the sector error.
pub trait Decoder: Sync {
    fn name(&self) -> String;
    fn view(&self) -> &SectorView;
    fn decode_batch(&self, runs: &[SyndromeRun]) -> Result<Vec<BitVector>>;
}

/// Space-time matching; a single round is ordinary matching.
pub struct MwpmEval {
    decoder: MwpmDecoder,
    view: SectorView,
}

impl MwpmEval {
    pub fn new(code: &StabilizerCode, sector: Sector) -> Result<Self> {
        Ok(Self {
            decoder: MwpmDecoder::new(code, sector)?,
            view: code.view(sector),
        })
    }
}

impl Decoder for MwpmEval {
    fn name(&self) -> String {
        "mwpm".into()
    }

    fn view(&self) -> &SectorView {
        &self.view
    }

    fn decode_batch(&self, runs: &[SyndromeRun]) -> Result<Vec<BitVector>> {
        runs.iter().map(|r| self.decoder.decode_rounds(&r.syndromes)).collect()
    }
}

/// Neural decoder; bits with logit above zero (probability above 1/2) are flipped.
pub struct NeuralEval {
    model: AnyModel<f32>,
}

impl NeuralEval {
    pub fn new(model: AnyModel<f32>) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &AnyModel<f32> {
        &self.model
    }
}

impl Decoder for NeuralEval {
    fn name(&self) -> String {
        self.model.kind().into()
    }

    fn view(&self) -> &SectorView {
        self.model.view()
    }

    fn decode_batch(&self, runs: &[SyndromeRun]) -> Result<Vec<BitVector>> {
        let batch = Batch::<f32>::from_runs(self.model.view(), runs)?;
        let mut tape = Tape::new();
        let out = self.model.forward(&mut tape, &batch)?;
        Ok(hard_decisions(&tape, out.noise_logits)
            .into_iter()
            .map(BitVector::from_bools)
            .collect())
    }
}

/// Always predicts no error.
pub struct IdentityDecoder(pub SectorView);

impl Decoder for IdentityDecoder {
    fn name(&self) -> String {
        "identity".into()
    }

    fn view(&self) -> &SectorView {
        &self.0
    }

    fn decode_batch(&self, runs: &[SyndromeRun]) -> Result<Vec<BitVector>> {
        Ok(vec![BitVector::zeros(self.0.n_err()); runs.len()])
    }
}

/// Returns the true error; a sanity reference.
pub struct OracleDecoder(pub SectorView);

impl Decoder for OracleDecoder {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn view(&self) -> &SectorView {
        &self.0
    }

    fn decode_batch(&self, runs: &[SyndromeRun]) -> Result<Vec<BitVector>> {
        Ok(runs.iter().map(|r| self.0.error_slice(&r.cumulative_error)).collect())
    }
}

/// Noise and sampling plan of an evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPlan {
    pub channel: Channel,
    pub rounds: usize,
    pub q: f64,
    pub ps: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

impl EvalPlan {
    /// Perfect measurements, 10⁵ samples per point.
    pub fn new(channel: Channel, ps: Vec<f64>, seed: u64) -> Self {
        Self {
            channel,
            rounds: 1,
            q: 0.0,
            ps,
            samples: 100_000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(invalid("at least one sample per point is required"));
        }
        if self.rounds == 0 {
            return Err(invalid("rounds must be at least 1"));
        }
        if self.ps.is_empty() {
            return Err(invalid("no error rates to evaluate"));
        }
        if let Some(p) = self.ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(invalid(format!("error rate {p} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&self.q) {
            return Err(invalid(format!("measurement error rate {} outside [0, 1]", self.q)));
        }
        Ok(())
    }
}

/// Raw counts at one error rate.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub samples: u64,
    /// Error coordinates inspected: `samples · n_err`.
    pub bits: u64,
    pub bit_errors: u64,
    /// Samples with `𝕃 ε̂ ≠ 𝕃 ε`.
    pub logical_failures: u64,
    /// Failures of each logical coordinate separately.
    pub coordinate_failures: Vec<u64>,
}

impl Counts {
    fn add(&mut self, other: &Counts) {
        self.samples += other.samples;
        self.bits += other.bits;
        self.bit_errors += other.bit_errors;
        self.logical_failures += other.logical_failures;
        if self.coordinate_failures.len() < other.coordinate_failures.len() {
            self.coordinate_failures.resize(other.coordinate_failures.len(), 0);
        }
        for (a, b) in self.coordinate_failures.iter_mut().zip(&other.coordinate_failures) {
            *a += b;
        }
    }
}

/// The run of sample `index` at error rate `p`.
pub fn eval_sample(code: &StabilizerCode, plan: &EvalPlan, p: f64, index: u64) -> Result<SyndromeRun> {
    let mut rng = StreamRng::derive(plan.seed, &[EVAL_STREAM, p.to_bits(), index]);
    sample_run(code, plan.channel, p, plan.q, plan.rounds, &mut rng)
}

fn count_chunk(decoder: &dyn Decoder, code: &StabilizerCode, plan: &EvalPlan, p: f64, range: Range<u64>) -> Result<Counts> {
    let runs = range
        .map(|i| eval_sample(code, plan, p, i))
        .collect::<Result<Vec<_>>>()?;
    let estimates = decoder.decode_batch(&runs)?;
    let view = decoder.view();
    let k = view.n_logical();
    let mut c = Counts {
        samples: runs.len() as u64,
        bits: (runs.len() * view.n_err()) as u64,
        coordinate_failures: vec![0; k],
        ..Counts::default()
    };
    for (run, est) in runs.iter().zip(&estimates) {
        let mut residual = view.error_slice(&run.cumulative_error);
        residual.xor_assign(est)?;
        c.bit_errors += residual.weight() as u64;
        let l = view.logicals.matvec(&residual)?;
        if !l.is_zero() {
            c.logical_failures += 1;
        }
        for j in l.iter_ones() {
            c.coordinate_failures[j] += 1;
        }
    }
    Ok(c)
}

/// Counts for samples `range` at one error rate, chunk by chunk.
pub fn evaluate_range(
    decoder: &dyn Decoder,
    code: &StabilizerCode,
    plan: &EvalPlan,
    p: f64,
    range: Range<u64>,
) -> Result<Counts> {
    let chunks: Vec<Range<u64>> = (range.start..range.end)
        .step_by(CHUNK)
        .map(|s| s..(s + CHUNK as u64).min(range.end))
        .collect();
    let parts = chunks
        .into_par_iter()
        .map(|r| count_chunk(decoder, code, plan, p, r))
        .collect::<Result<Vec<_>>>()?;
    let mut total = Counts {
        coordinate_failures: vec![0; decoder.view().n_logical()],
        ..Counts::default()
    };
    for c in &parts {
        total.add(c);
    }
    Ok(total)
}

/// Estimates BER and LER at every error rate of the plan.
pub fn evaluate(decoder: &dyn Decoder, code: &StabilizerCode, plan: &EvalPlan) -> Result<DecodeReport> {
    plan.validate()?;
    let view = decoder.view();
    if view.h != code.view(view.sector).h {
        return Err(invalid("decoder was built for a different code"));
    }
    let start = Instant::now();
    let mut rows = Vec::with_capacity(plan.ps.len());
    for &p in &plan.ps {
        let c = evaluate_range(decoder, code, plan, p, 0..plan.samples as u64)?;
        rows.push(ReportRow::from_counts(&decoder.name(), code, view.sector, plan, p, &c));
    }
    Ok(DecodeReport {
        rows,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
