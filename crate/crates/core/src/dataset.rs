//! `QSYN` dataset files: a fixed header followed by packed [`SyndromeRun`]s.
//!
//! Layout (all integers little-endian):
//!
//! | field      | type  |
//! |------------|-------|
//! | magic      | `QSYN`|
//! | version    | u32 (=1) |
//! | code hash  | u64   |
//! | n          | u32   |
//! | n_s        | u32   |
//! | channel id | u8 (0 independent, 1 depolarizing, 255 external) |
//! | p          | f64   |
//! | q          | f64   |
//! | T          | u32   |
//! | count      | u64   |
//!
//! Each record stores, for `t = 1..T`, the data error `x`, `z` (n bits each),
//! the measurement flips (n_s bits) and the measured syndrome (n_s bits),
//! followed by the cumulative error `x`, `z`. Bit vectors are written as whole
//! `u64` words.

use std::io::{Read, Write};

use crate::codes::StabilizerCode;
use crate::error::{format_err, invalid, Result};
use crate::gf2::BitVector;
use rayon::prelude::*;

use crate::noise::{sample_run, Channel, PauliError, StreamRng, SyndromeRun};
use crate::wire;

const WHAT: &str = "QSYN dataset";
const VERSION: u32 = 1;
const SAMPLE_STREAM: u64 = 0x7173_796e;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub code_hash: u64,
    pub n: usize,
    pub n_s: usize,
    pub channel: Channel,
    pub p: f64,
    pub q: f64,
    pub rounds: usize,
    pub count: usize,
}

impl DatasetHeader {
    pub fn for_code(code: &StabilizerCode, channel: Channel, p: f64, q: f64, rounds: usize, count: usize) -> Self {
        Self {
            code_hash: code.hash(),
            n: code.n(),
            n_s: code.n_s(),
            channel,
            p,
            q,
            rounds,
            count,
        }
    }

    pub fn matches(&self, code: &StabilizerCode) -> bool {
        self.code_hash == code.hash() && self.n == code.n() && self.n_s == code.n_s()
    }
}

pub fn write_dataset<W: Write>(w: &mut W, header: &DatasetHeader, runs: &[SyndromeRun]) -> Result<()> {
    if runs.len() != header.count {
        return Err(invalid(format!(
            "header announces {} records, got {}",
            header.count,
            runs.len()
        )));
    }
    w.write_all(b"QSYN")?;
    wire::put_u32(w, VERSION)?;
    wire::put_u64(w, header.code_hash)?;
    wire::put_u32(w, header.n as u32)?;
    wire::put_u32(w, header.n_s as u32)?;
    wire::put_u8(w, header.channel.id())?;
    wire::put_f64(w, header.p)?;
    wire::put_f64(w, header.q)?;
    wire::put_u32(w, header.rounds as u32)?;
    wire::put_u64(w, header.count as u64)?;
    for (i, run) in runs.iter().enumerate() {
        if run.rounds() != header.rounds
            || run.cumulative_error.n() != header.n
            || run.syndromes.iter().any(|s| s.len() != header.n_s)
        {
            return Err(invalid(format!("record {i} does not match the header shape")));
        }
        for t in 0..header.rounds {
            run.step_errors[t].x.write_words(w)?;
            run.step_errors[t].z.write_words(w)?;
            run.measurement_errors[t].write_words(w)?;
            run.syndromes[t].write_words(w)?;
        }
        run.cumulative_error.x.write_words(w)?;
        run.cumulative_error.z.write_words(w)?;
    }
    Ok(())
}

pub fn read_dataset<R: Read>(r: &mut R) -> Result<(DatasetHeader, Vec<SyndromeRun>)> {
    wire::expect_magic(r, b"QSYN", WHAT)?;
    let version = wire::get_u32(r, WHAT)?;
    if version != VERSION {
        return Err(format_err(WHAT, format!("unsupported version {version}")));
    }
    let code_hash = wire::get_u64(r, WHAT)?;
    let n = wire::get_u32(r, WHAT)? as usize;
    let n_s = wire::get_u32(r, WHAT)? as usize;
    let channel_id = wire::get_u8(r, WHAT)?;
    let channel = Channel::from_id(channel_id)
        .ok_or_else(|| format_err(WHAT, format!("unknown channel id {channel_id}")))?;
    let p = wire::get_f64(r, WHAT)?;
    let q = wire::get_f64(r, WHAT)?;
    let rounds = wire::get_u32(r, WHAT)? as usize;
    let count = wire::get_u64(r, WHAT)? as usize;
    if rounds == 0 {
        return Err(format_err(WHAT, "T must be at least 1"));
    }
    let header = DatasetHeader {
        code_hash,
        n,
        n_s,
        channel,
        p,
        q,
        rounds,
        count,
    };
    let mut runs = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let mut run = SyndromeRun {
            syndromes: Vec::with_capacity(rounds),
            cumulative_error: PauliError::identity(n),
            step_errors: Vec::with_capacity(rounds),
            measurement_errors: Vec::with_capacity(rounds),
        };
        for _ in 0..rounds {
            let x = BitVector::read_words(r, n, WHAT)?;
            let z = BitVector::read_words(r, n, WHAT)?;
            run.step_errors.push(PauliError { x, z });
            run.measurement_errors.push(BitVector::read_words(r, n_s, WHAT)?);
            run.syndromes.push(BitVector::read_words(r, n_s, WHAT)?);
        }
        run.cumulative_error = PauliError {
            x: BitVector::read_words(r, n, WHAT)?,
            z: BitVector::read_words(r, n, WHAT)?,
        };
        runs.push(run);
    }
    Ok((header, runs))
}

/// `count` runs; run `i` comes from its own stream derived from `seed` and
/// `i`, so the result does not depend on the number of worker threads.
pub fn sample_runs(
    code: &StabilizerCode,
    channel: Channel,
    p: f64,
    q: f64,
    rounds: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<SyndromeRun>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = StreamRng::derive(seed, &[SAMPLE_STREAM, i]);
            sample_run(code, channel, p, q, rounds, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_faulty_run, StreamRng};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip(seed in any::<u64>(), rounds in 1usize..4, l in 2usize..5, count in 0usize..6) {
            let code = StabilizerCode::toric(l).unwrap();
            let mut rng = StreamRng::from_seed(seed);
            let runs: Vec<_> = (0..count)
                .map(|_| sample_faulty_run(&code, Channel::Depolarizing, 0.1, 0.05, rounds, &mut rng).unwrap())
                .collect();
            let header = DatasetHeader::for_code(&code, Channel::Depolarizing, 0.1, 0.05, rounds, count);
            let mut buf = Vec::new();
            write_dataset(&mut buf, &header, &runs).unwrap();
            let (h2, r2) = read_dataset(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(h2, header);
            prop_assert_eq!(r2, runs);
        }
    }

    #[test]
    fn truncated_file_is_an_error() {
        let code = StabilizerCode::toric(2).unwrap();
        let run = sample_faulty_run(&code, Channel::Independent, 0.2, 0.0, 1, &mut StreamRng::from_seed(0)).unwrap();
        let header = DatasetHeader::for_code(&code, Channel::Independent, 0.2, 0.0, 1, 1);
        let mut buf = Vec::new();
        write_dataset(&mut buf, &header, &[run]).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_dataset(&mut buf.as_slice()).is_err());
        assert!(read_dataset(&mut &b"QSYX"[..]).is_err());
    }

    #[test]
    fn header_count_must_match() {
        let code = StabilizerCode::toric(2).unwrap();
        let header = DatasetHeader::for_code(&code, Channel::Independent, 0.2, 0.0, 1, 2);
        assert!(write_dataset(&mut Vec::new(), &header, &[]).is_err());
    }

    #[test]
    fn sampling_ignores_thread_count() {
        let code = StabilizerCode::toric(3).unwrap();
        let draw = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sample_runs(&code, Channel::Depolarizing, 0.1, 0.1, 3, 40, 5).unwrap())
        };
        let a = draw(1);
        assert_eq!(a, draw(3));
        assert!(a.iter().all(|r| r.is_consistent(&code).unwrap()));
        assert_ne!(a[0], a[1]);
    }
}
