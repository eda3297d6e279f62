//! Seeded noise channels and repeated syndrome extraction.
//!
//! Every sampler draws from a [`StreamRng`], a xoshiro256** generator whose
//! 256-bit state is derived from a master seed and a stream path with
//! SplitMix64. Streams for different workers or samples are therefore
//! independent of scheduling: sample `i` of a campaign always sees the same
//! stream no matter which thread draws it.

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256StarStar};

use crate::codes::StabilizerCode;
use crate::error::{invalid, Result};
use crate::gf2::BitVector;

/// Binary symplectic representation of an n-qubit Pauli error.
///
/// A Y error on qubit `i` has both `x[i]` and `z[i]` set.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PauliError {
    pub x: BitVector,
    pub z: BitVector,
}

impl PauliError {
    pub fn identity(n: usize) -> Self {
        Self {
            x: BitVector::zeros(n),
            z: BitVector::zeros(n),
        }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// `[x | z]`, length `2n`.
    pub fn to_vector(&self) -> BitVector {
        self.x.concat(&self.z)
    }

    pub fn from_vector(v: &BitVector) -> Self {
        assert!(v.len() % 2 == 0, "symplectic vectors have even length");
        let n = v.len() / 2;
        Self {
            x: v.slice(0, n),
            z: v.slice(n, n),
        }
    }

    /// Product of two Paulis up to phase.
    pub fn compose(&self, other: &PauliError) -> PauliError {
        let mut out = self.clone();
        out.compose_assign(other);
        out
    }

    pub fn compose_assign(&mut self, other: &PauliError) {
        assert_eq!(self.n(), other.n(), "Pauli errors act on different qubit counts");
        self.x.xor_assign(&other.x).expect("equal lengths");
        self.z.xor_assign(&other.z).expect("equal lengths");
    }

    /// Number of qubits with a non-identity Pauli.
    pub fn weight(&self) -> usize {
        (0..self.n()).filter(|&i| self.x.get(i) || self.z.get(i)).count()
    }

    pub fn is_identity(&self) -> bool {
        self.x.is_zero() && self.z.is_zero()
    }
}

/// xoshiro256** stream with a documented derivation from `(seed, path)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamRng(Xoshiro256StarStar);

impl StreamRng {
    pub const ALGORITHM: &'static str = "xoshiro256**/splitmix64";

    /// Stream seeded from a single 64-bit seed.
    pub fn from_seed(seed: u64) -> Self {
        Self::derive(seed, &[])
    }

    /// Independent stream for `path` under `seed`, e.g. `[p_index, sample]`.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        let mut mixer = SplitMix64::seed_from_u64(seed);
        let mut key = mixer.next_u64();
        for &component in path {
            let mut m = SplitMix64::seed_from_u64(key ^ component.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            key = m.next_u64() ^ component;
        }
        let mut expand = SplitMix64::seed_from_u64(key);
        let mut state = [0u8; 32];
        expand.fill_bytes(&mut state);
        if state.iter().all(|&b| b == 0) {
            state[0] = 1;
        }
        StreamRng(Xoshiro256StarStar::from_seed(state))
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    /// X and Z flips drawn independently, each with probability `p`.
    Independent,
    /// X, Y or Z each with probability `p/3`.
    Depolarizing,
    /// Records produced by an outside simulator.
    External,
}

impl Channel {
    pub fn id(self) -> u8 {
        match self {
            Channel::Independent => 0,
            Channel::Depolarizing => 1,
            Channel::External => 255,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Channel::Independent),
            1 => Some(Channel::Depolarizing),
            255 => Some(Channel::External),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Independent => "independent",
            Channel::Depolarizing => "depolarizing",
            Channel::External => "external",
        }
    }

    pub fn sample(self, n: usize, p: f64, rng: &mut StreamRng) -> Result<PauliError> {
        match self {
            Channel::Independent => sample_independent(n, p, rng),
            Channel::Depolarizing => sample_depolarizing(n, p, rng),
            Channel::External => Err(invalid("external channels cannot be sampled")),
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Channel {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independent" | "indep" => Ok(Channel::Independent),
            "depolarizing" | "depolarization" | "depol" => Ok(Channel::Depolarizing),
            "external" => Ok(Channel::External),
            other => Err(invalid(format!("unknown channel {other:?}"))),
        }
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

#[inline]
fn bernoulli(rng: &mut StreamRng, p: f64) -> bool {
    rng.random::<f64>() < p
}

fn bernoulli_vector(len: usize, p: f64, rng: &mut StreamRng) -> BitVector {
    let mut v = BitVector::zeros(len);
    for i in 0..len {
        if bernoulli(rng, p) {
            v.set(i, true);
        }
    }
    v
}

/// X flips on every qubit with probability `p`, then Z flips likewise.
pub fn sample_independent(n: usize, p: f64, rng: &mut StreamRng) -> Result<PauliError> {
    check_probability("p", p)?;
    let x = bernoulli_vector(n, p, rng);
    let z = bernoulli_vector(n, p, rng);
    Ok(PauliError { x, z })
}

/// One uniform draw per qubit: `[0, p/3)` is X, `[p/3, 2p/3)` is Z, `[2p/3, p)` is Y.
pub fn sample_depolarizing(n: usize, p: f64, rng: &mut StreamRng) -> Result<PauliError> {
    check_probability("p", p)?;
    let mut e = PauliError::identity(n);
    let (third, two_thirds) = (p / 3.0, 2.0 * p / 3.0);
    for i in 0..n {
        let u: f64 = rng.random();
        if u >= p {
            continue;
        }
        if u < third {
            e.x.set(i, true);
        } else if u < two_thirds {
            e.z.set(i, true);
        } else {
            e.x.set(i, true);
            e.z.set(i, true);
        }
    }
    Ok(e)
}

/// `T` rounds of syndrome extraction with data and measurement noise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyndromeRun {
    /// Measured syndrome of each round.
    pub syndromes: Vec<BitVector>,
    /// Product of all data errors.
    pub cumulative_error: PauliError,
    /// Fresh data error drawn before each round.
    pub step_errors: Vec<PauliError>,
    /// Flipped syndrome bits of each round.
    pub measurement_errors: Vec<BitVector>,
}

impl SyndromeRun {
    pub fn rounds(&self) -> usize {
        self.syndromes.len()
    }

    /// Last measured syndrome.
    pub fn final_syndrome(&self) -> &BitVector {
        self.syndromes.last().expect("runs have at least one round")
    }

    /// A single perfect round for a known error.
    pub fn perfect(code: &StabilizerCode, error: PauliError) -> Result<Self> {
        let s = code.syndrome(&error)?;
        Ok(Self {
            measurement_errors: vec![BitVector::zeros(s.len())],
            syndromes: vec![s],
            step_errors: vec![error.clone()],
            cumulative_error: error,
        })
    }

    /// Recomputes every round from the stored per-step errors.
    pub fn is_consistent(&self, code: &StabilizerCode) -> Result<bool> {
        let t = self.rounds();
        if t == 0 || self.step_errors.len() != t || self.measurement_errors.len() != t {
            return Ok(false);
        }
        let mut acc = PauliError::identity(code.n());
        for i in 0..t {
            acc.compose_assign(&self.step_errors[i]);
            let mut s = code.syndrome(&acc)?;
            s.xor_assign(&self.measurement_errors[i])?;
            if s != self.syndromes[i] {
                return Ok(false);
            }
        }
        Ok(acc == self.cumulative_error)
    }
}

/// One noiseless measurement round after a single draw from `channel`.
pub fn sample_perfect_run(
    code: &StabilizerCode,
    channel: Channel,
    p: f64,
    rng: &mut StreamRng,
) -> Result<SyndromeRun> {
    let e = channel.sample(code.n(), p, rng)?;
    SyndromeRun::perfect(code, e)
}

/// `s_t = H(ε_1 ⊕ … ⊕ ε_t) ⊕ ε̃_t` for `t = 1..T`, with fresh data errors at
/// rate `p` and syndrome-bit flips at rate `q` each round.
pub fn sample_faulty_run(
    code: &StabilizerCode,
    channel: Channel,
    p: f64,
    q: f64,
    rounds: usize,
    rng: &mut StreamRng,
) -> Result<SyndromeRun> {
    if rounds == 0 {
        return Err(invalid("a run needs at least one measurement round"));
    }
    check_probability("p", p)?;
    check_probability("q", q)?;
    let mut acc = PauliError::identity(code.n());
    let mut run = SyndromeRun {
        syndromes: Vec::with_capacity(rounds),
        cumulative_error: PauliError::identity(code.n()),
        step_errors: Vec::with_capacity(rounds),
        measurement_errors: Vec::with_capacity(rounds),
    };
    for _ in 0..rounds {
        let step = channel.sample(code.n(), p, rng)?;
        acc.compose_assign(&step);
        let flips = bernoulli_vector(code.n_s(), q, rng);
        let mut s = code.syndrome(&acc)?;
        s.xor_assign(&flips)?;
        run.syndromes.push(s);
        run.step_errors.push(step);
        run.measurement_errors.push(flips);
    }
    run.cumulative_error = acc;
    Ok(run)
}

/// Draws either a perfect run (`rounds == 1` and `q == 0`) or a faulty one.
pub fn sample_run(
    code: &StabilizerCode,
    channel: Channel,
    p: f64,
    q: f64,
    rounds: usize,
    rng: &mut StreamRng,
) -> Result<SyndromeRun> {
    if rounds == 1 && q == 0.0 {
        sample_perfect_run(code, channel, p, rng)
    } else {
        sample_faulty_run(code, channel, p, q, rounds, rng)
    }
}
