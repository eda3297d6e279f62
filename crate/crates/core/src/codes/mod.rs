//! Toric and planar surface codes in binary symplectic form.
//!
//! An error is the pair `(x, z)` of length-`n` bit vectors, laid out as the
//! length-`2n` vector `[x | z]`. The block parity-check matrix is
//!
//! ```text
//! H = [[H_Z, 0  ],      rows 0..m_z        : Z-type checks, see X errors
//!      [0,   H_X]]      rows m_z..m_z+m_x  : X-type checks, see Z errors
//! ```
//!
//! so `s = H [x | z]`. The logical matrix `𝕃` uses the same column layout: a
//! row supported on the `x` half reads out whether an X error flips a logical
//! qubit (it is a Z-type logical operator), and likewise for the `z` half.

mod io;
mod mask;
mod surface;
mod toric;

use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::gf2::{BitMatrix, BitVector};
use crate::noise::PauliError;

pub use io::{read_code_file, write_code_file};
pub use mask::{AttentionMask, MASKED_SCORE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CodeFamily {
    Toric,
    Surface,
}

impl CodeFamily {
    pub fn name(self) -> &'static str {
        match self {
            CodeFamily::Toric => "toric",
            CodeFamily::Surface => "surface",
        }
    }
}

impl fmt::Display for CodeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CodeFamily {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "toric" => Ok(CodeFamily::Toric),
            "surface" => Ok(CodeFamily::Surface),
            other => Err(invalid(format!("unknown code family {other:?}"))),
        }
    }
}

/// Pauli type of a stabilizer generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CheckKind {
    /// Product of X operators (toric vertex). Detects Z errors.
    X,
    /// Product of Z operators (toric plaquette). Detects X errors.
    Z,
}

/// One stabilizer generator and where it sits on the lattice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Check {
    pub kind: CheckKind,
    pub coord: (usize, usize),
    pub qubits: Vec<usize>,
}

/// Which part of the error a decoder is responsible for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sector {
    /// Bit flips only: `x` part against the Z-type checks.
    X,
    /// Phase flips only: `z` part against the X-type checks.
    Z,
    /// The full `[x | z]` vector against the block matrix.
    Joint,
}

impl Sector {
    pub fn name(self) -> &'static str {
        match self {
            Sector::X => "x",
            Sector::Z => "z",
            Sector::Joint => "joint",
        }
    }
}

impl std::str::FromStr for Sector {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Sector::X),
            "z" => Ok(Sector::Z),
            "joint" | "xz" => Ok(Sector::Joint),
            other => Err(invalid(format!("unknown sector {other:?}"))),
        }
    }
}

/// A CSS stabilizer code on a square lattice.
#[derive(Clone, Debug)]
pub struct StabilizerCode {
    family: CodeFamily,
    distance: usize,
    n: usize,
    checks: Vec<Check>,
    n_z_checks: usize,
    h: BitMatrix,
    logicals: BitMatrix,
    qubit_coords: Vec<(usize, usize)>,
}

impl StabilizerCode {
    /// Toric code on an `l x l` periodic lattice, qubits on edges.
    ///
    /// Horizontal edges come first in row-major order, then vertical edges.
    pub fn toric(l: usize) -> Result<Self> {
        if l < 2 {
            return Err(invalid(format!("toric code needs L >= 2, got {l}")));
        }
        Ok(toric::build(l))
    }

    /// Unrotated planar surface code with distance `l`.
    pub fn surface(l: usize) -> Result<Self> {
        if l < 2 {
            return Err(invalid(format!("surface code needs L >= 2, got {l}")));
        }
        Ok(surface::build(l))
    }

    pub fn build(family: CodeFamily, l: usize) -> Result<Self> {
        match family {
            CodeFamily::Toric => Self::toric(l),
            CodeFamily::Surface => Self::surface(l),
        }
    }

    /// Assembles a code from its checks and logical operators. Z-type checks
    /// must precede X-type checks.
    pub(crate) fn assemble(
        family: CodeFamily,
        distance: usize,
        qubit_coords: Vec<(usize, usize)>,
        checks: Vec<Check>,
        logical_rows: Vec<BitVector>,
    ) -> Self {
        let n = qubit_coords.len();
        let n_z_checks = checks.iter().take_while(|c| c.kind == CheckKind::Z).count();
        debug_assert!(checks[n_z_checks..].iter().all(|c| c.kind == CheckKind::X));
        let mut h = BitMatrix::zeros(checks.len(), 2 * n);
        for (row, check) in checks.iter().enumerate() {
            let offset = match check.kind {
                CheckKind::Z => 0,
                CheckKind::X => n,
            };
            for &q in &check.qubits {
                h.set(row, offset + q, true);
            }
        }
        let logicals = BitMatrix::from_rows(2 * n, &logical_rows).expect("logical rows have length 2n");
        Self {
            family,
            distance,
            n,
            checks,
            n_z_checks,
            h,
            logicals,
            qubit_coords,
        }
    }

    pub fn family(&self) -> CodeFamily {
        self.family
    }

    /// Lattice length `L`.
    pub fn distance(&self) -> usize {
        self.distance
    }

    /// Physical qubit count.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Stabilizer count (rows of `H`).
    pub fn n_s(&self) -> usize {
        self.checks.len()
    }

    /// Error-coordinate count for joint decoding.
    pub fn n_err(&self) -> usize {
        2 * self.n
    }

    pub fn n_logical(&self) -> usize {
        self.logicals.rows()
    }

    pub fn n_z_checks(&self) -> usize {
        self.n_z_checks
    }

    pub fn n_x_checks(&self) -> usize {
        self.checks.len() - self.n_z_checks
    }

    /// Block parity-check matrix, `n_s x 2n`.
    pub fn parity_check(&self) -> &BitMatrix {
        &self.h
    }

    /// Logical read-out matrix, `n_log x 2n`.
    pub fn logicals(&self) -> &BitMatrix {
        &self.logicals
    }

    pub fn checks(&self) -> &[Check] {
        &self.checks
    }

    pub fn qubit_coords(&self) -> &[(usize, usize)] {
        &self.qubit_coords
    }

    /// `H_Z`: Z-type checks against the `x` half.
    pub fn hz(&self) -> BitMatrix {
        self.h.submatrix(0, self.n_z_checks, 0, self.n)
    }

    /// `H_X`: X-type checks against the `z` half.
    pub fn hx(&self) -> BitMatrix {
        self.h.submatrix(self.n_z_checks, self.n_x_checks(), self.n, self.n)
    }

    /// Stabilizer generators written as errors: X-type checks are X errors
    /// (`x` half), Z-type checks are Z errors (`z` half).
    pub fn stabilizers_as_errors(&self) -> BitMatrix {
        let mut out = BitMatrix::zeros(self.n_s(), 2 * self.n);
        for (row, check) in self.checks.iter().enumerate() {
            let offset = match check.kind {
                CheckKind::X => 0,
                CheckKind::Z => self.n,
            };
            for &q in &check.qubits {
                out.set(row, offset + q, true);
            }
        }
        out
    }

    /// `s = H [x | z]`.
    pub fn syndrome(&self, e: &PauliError) -> Result<BitVector> {
        self.check_error(e)?;
        self.h.matvec(&e.to_vector())
    }

    /// `𝕃 [x | z]`.
    pub fn logical_projection(&self, e: &PauliError) -> Result<BitVector> {
        self.check_error(e)?;
        self.logicals.matvec(&e.to_vector())
    }

    /// Mask over the `2n + n_s` joint sequence.
    pub fn mask(&self) -> AttentionMask {
        AttentionMask::from_parity_check(&self.h)
    }

    /// Sub-problem decoded by a single decoder instance.
    pub fn view(&self, sector: Sector) -> SectorView {
        let n = self.n;
        let (h, logical_rows, err_offset, syn_offset): (BitMatrix, Vec<usize>, usize, usize) = match sector {
            Sector::X => (
                self.hz(),
                self.logical_rows_within(0, n),
                0,
                0,
            ),
            Sector::Z => (
                self.hx(),
                self.logical_rows_within(n, n),
                n,
                self.n_z_checks,
            ),
            Sector::Joint => (self.h.clone(), (0..self.n_logical()).collect(), 0, 0),
        };
        let (col_start, ncols) = match sector {
            Sector::Joint => (0, 2 * n),
            _ => (err_offset, n),
        };
        let mut logicals = BitMatrix::zeros(logical_rows.len(), ncols);
        for (i, &r) in logical_rows.iter().enumerate() {
            for c in self.logicals.row(r).iter_ones() {
                if c >= col_start && c < col_start + ncols {
                    logicals.set(i, c - col_start, true);
                }
            }
        }
        SectorView {
            sector,
            syndrome_offset: syn_offset,
            h,
            logicals,
        }
    }

    fn logical_rows_within(&self, start: usize, len: usize) -> Vec<usize> {
        (0..self.n_logical())
            .filter(|&r| self.logicals.row(r).iter_ones().all(|c| c >= start && c < start + len))
            .collect()
    }

    fn check_error(&self, e: &PauliError) -> Result<()> {
        if e.n() != self.n {
            return Err(invalid(format!(
                "error acts on {} qubits, code has {}",
                e.n(),
                self.n
            )));
        }
        Ok(())
    }

    /// Stable 64-bit fingerprint of `H` and `𝕃`.
    pub fn hash(&self) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(self.family.name().as_bytes());
        hasher.update(self.h.to_bytes());
        hasher.update(self.logicals.to_bytes());
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    /// Short identifier such as `toric:4`.
    pub fn label(&self) -> String {
        format!("{}:{}", self.family, self.distance)
    }
}

/// Parses `toric:4` / `surface:3`.
pub fn parse_code_spec(spec: &str) -> Result<StabilizerCode> {
    let (family, l) = spec
        .split_once(':')
        .ok_or_else(|| invalid(format!("code spec {spec:?} should look like toric:4")))?;
    let l: usize = l
        .trim()
        .parse()
        .map_err(|_| invalid(format!("bad lattice length in {spec:?}")))?;
    StabilizerCode::build(family.trim().parse()?, l)
}

/// The parity-check and logical matrices seen by one decoder.
#[derive(Clone, Debug)]
pub struct SectorView {
    pub sector: Sector,
    /// First row of this view inside the full syndrome.
    pub syndrome_offset: usize,
    pub h: BitMatrix,
    pub logicals: BitMatrix,
}

impl SectorView {
    pub fn n_err(&self) -> usize {
        self.h.cols()
    }

    pub fn n_s(&self) -> usize {
        self.h.rows()
    }

    pub fn n_logical(&self) -> usize {
        self.logicals.rows()
    }

    /// The part of a full syndrome this view decodes.
    pub fn syndrome_slice(&self, full: &BitVector) -> BitVector {
        if self.sector == Sector::Joint {
            return full.clone();
        }
        full.slice(self.syndrome_offset, self.n_s())
    }

    /// The part of an error this view is asked to recover.
    pub fn error_slice(&self, e: &PauliError) -> BitVector {
        match self.sector {
            Sector::X => e.x.clone(),
            Sector::Z => e.z.clone(),
            Sector::Joint => e.to_vector(),
        }
    }

    pub fn mask(&self) -> AttentionMask {
        AttentionMask::from_parity_check(&self.h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::StreamRng;
    use rand::Rng;

    fn random_error(n: usize, rng: &mut StreamRng) -> PauliError {
        PauliError {
            x: BitVector::from_bools((0..n).map(|_| rng.random_bool(0.3))),
            z: BitVector::from_bools((0..n).map(|_| rng.random_bool(0.3))),
        }
    }

    fn stabilizer_element(code: &StabilizerCode, rng: &mut StreamRng) -> PauliError {
        let gens = code.stabilizers_as_errors();
        let mut v = BitVector::zeros(2 * code.n());
        for r in 0..gens.rows() {
            if rng.random_bool(0.5) {
                v.xor_assign(&gens.row(r)).unwrap();
            }
        }
        PauliError::from_vector(&v)
    }

    #[test]
    fn toric_dimensions() {
        let code = StabilizerCode::toric(2).unwrap();
        assert_eq!((code.n(), code.n_s()), (8, 8));
        assert_eq!(
            (code.parity_check().rows(), code.parity_check().cols()),
            (8, 16)
        );
        assert_eq!(code.n_logical(), 4);
        assert!(matches!(StabilizerCode::toric(1), Err(crate::Error::InvalidArgument(_))));
    }

    #[test]
    fn toric_weights() {
        let code = StabilizerCode::toric(4).unwrap();
        assert_eq!(code.n(), 32);
        let h = code.parity_check();
        for r in 0..h.rows() {
            assert_eq!(h.row_weight(r), 4);
        }
        for block in [code.hz(), code.hx()] {
            for c in 0..block.cols() {
                assert_eq!(block.col_weight(c), 2);
            }
        }
        for r in 0..code.n_logical() {
            assert_eq!(code.logicals().row_weight(r), 4);
        }
    }

    #[test]
    fn toric_rank_deficiency() {
        for l in 2..=6 {
            let code = StabilizerCode::toric(l).unwrap();
            assert_eq!(code.hx().rank(), l * l - 1);
            assert_eq!(code.hz().rank(), l * l - 1);
        }
        assert_eq!(StabilizerCode::toric(2).unwrap().hx().rank(), 3);
    }

    #[test]
    fn logicals_commute_with_stabilizers() {
        for code in [
            StabilizerCode::toric(3).unwrap(),
            StabilizerCode::toric(4).unwrap(),
            StabilizerCode::surface(2).unwrap(),
            StabilizerCode::surface(5).unwrap(),
        ] {
            let prod = code
                .logicals()
                .matmul(&code.stabilizers_as_errors().transpose())
                .unwrap();
            assert!(prod.is_zero(), "{}", code.label());
            // Stabilizers also commute with each other.
            let hh = code
                .parity_check()
                .matmul(&code.stabilizers_as_errors().transpose())
                .unwrap();
            assert!(hh.is_zero(), "{}", code.label());
        }
    }

    #[test]
    fn surface_dimensions() {
        let s2 = StabilizerCode::surface(2).unwrap();
        assert_eq!(s2.n(), 5);
        assert_eq!((s2.n_z_checks(), s2.n_x_checks()), (2, 2));
        let s3 = StabilizerCode::surface(3).unwrap();
        assert_eq!((s3.n(), s3.n_s()), (13, 12));
        for l in 2..=7 {
            let code = StabilizerCode::surface(l).unwrap();
            assert_eq!(code.n(), l * l + (l - 1) * (l - 1));
            assert_eq!(code.n_z_checks(), l * (l - 1));
            assert_eq!(code.n_logical(), 2);
            let weights: Vec<usize> = (0..code.n_s()).map(|r| code.parity_check().row_weight(r)).collect();
            assert!(weights.iter().all(|&w| w == 3 || w == 4));
            assert!(weights.contains(&3));
        }
    }

    #[test]
    fn surface_logicals_anticommute_once() {
        for l in 2..=7 {
            let code = StabilizerCode::surface(l).unwrap();
            let n = code.n();
            let a = code.logicals().row(0);
            let b = code.logicals().row(1);
            // Symplectic form <(a1|a2), (b1|b2)> = a1.b2 + a2.b1.
            let sym = (a.slice(0, n).dot(&b.slice(n, n)).unwrap())
                ^ (a.slice(n, n).dot(&b.slice(0, n)).unwrap());
            assert!(sym, "L={l}");
        }
    }

    #[test]
    fn toric_logical_pairs_anticommute() {
        let code = StabilizerCode::toric(5).unwrap();
        let n = code.n();
        let rows: Vec<BitVector> = (0..4).map(|r| code.logicals().row(r)).collect();
        let sym = |a: &BitVector, b: &BitVector| {
            a.slice(0, n).dot(&b.slice(n, n)).unwrap() ^ a.slice(n, n).dot(&b.slice(0, n)).unwrap()
        };
        let table: Vec<Vec<bool>> = rows.iter().map(|a| rows.iter().map(|b| sym(a, b)).collect()).collect();
        assert_eq!(
            table,
            vec![
                vec![false, false, true, false],
                vec![false, false, false, true],
                vec![true, false, false, false],
                vec![false, true, false, false],
            ]
        );
    }

    #[test]
    fn syndrome_examples() {
        let code = StabilizerCode::toric(4).unwrap();
        assert!(code.syndrome(&PauliError::identity(32)).unwrap().is_zero());

        let mut e = PauliError::identity(32);
        e.x.set(5, true);
        let s = code.syndrome(&e).unwrap();
        assert_eq!(s.weight(), 2);
        assert!(s.iter_ones().all(|i| i < code.n_z_checks()));

        assert!(code.syndrome(&PauliError::identity(31)).is_err());
    }

    #[test]
    fn stabilizers_are_invisible() {
        let mut rng = StreamRng::from_seed(11);
        for code in [StabilizerCode::toric(4).unwrap(), StabilizerCode::surface(4).unwrap()] {
            for _ in 0..500 {
                let g = stabilizer_element(&code, &mut rng);
                assert!(code.syndrome(&g).unwrap().is_zero());
                assert!(code.logical_projection(&g).unwrap().is_zero());
                let e = random_error(code.n(), &mut rng);
                assert_eq!(
                    code.syndrome(&e.compose(&g)).unwrap(),
                    code.syndrome(&e).unwrap()
                );
            }
        }
    }

    #[test]
    fn syndrome_is_linear() {
        let mut rng = StreamRng::from_seed(5);
        let code = StabilizerCode::toric(5).unwrap();
        for _ in 0..500 {
            let a = random_error(code.n(), &mut rng);
            let b = random_error(code.n(), &mut rng);
            let lhs = code.syndrome(&a.compose(&b)).unwrap();
            let mut rhs = code.syndrome(&a).unwrap();
            rhs.xor_assign(&code.syndrome(&b).unwrap()).unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn dual_loop_flips_one_logical() {
        let l = 4;
        let code = StabilizerCode::toric(l).unwrap();
        // X on the vertical edges of one row: a horizontal non-contractible dual loop.
        let mut e = PauliError::identity(code.n());
        for c in 0..l {
            e.x.set(l * l + 2 * l + c, true);
        }
        assert!(code.syndrome(&e).unwrap().is_zero());
        assert_eq!(code.logical_projection(&e).unwrap().weight(), 1);
        assert!(code.logical_projection(&PauliError::identity(code.n())).unwrap().is_zero());
    }

    #[test]
    fn sector_views_slice_consistently() {
        let mut rng = StreamRng::from_seed(3);
        for code in [StabilizerCode::toric(3).unwrap(), StabilizerCode::surface(3).unwrap()] {
            let vx = code.view(Sector::X);
            let vz = code.view(Sector::Z);
            let vj = code.view(Sector::Joint);
            assert_eq!(vx.n_logical() + vz.n_logical(), code.n_logical());
            assert_eq!(vj.n_err(), 2 * code.n());
            for _ in 0..100 {
                let e = random_error(code.n(), &mut rng);
                let s = code.syndrome(&e).unwrap();
                let l = code.logical_projection(&e).unwrap();
                for v in [&vx, &vz, &vj] {
                    let err = v.error_slice(&e);
                    assert_eq!(v.h.matvec(&err).unwrap(), v.syndrome_slice(&s));
                    let lv = v.logicals.matvec(&err).unwrap();
                    assert!(lv.weight() <= l.weight());
                }
            }
        }
    }

    #[test]
    fn parse_spec() {
        assert_eq!(parse_code_spec("toric:3").unwrap().n(), 18);
        assert_eq!(parse_code_spec("surface:3").unwrap().n(), 13);
        assert!(parse_code_spec("color:3").is_err());
        assert!(parse_code_spec("toric").is_err());
    }

    #[test]
    fn hash_distinguishes_codes() {
        let a = StabilizerCode::toric(3).unwrap().hash();
        assert_eq!(a, StabilizerCode::toric(3).unwrap().hash());
        assert_ne!(a, StabilizerCode::toric(4).unwrap().hash());
        assert_ne!(a, StabilizerCode::surface(3).unwrap().hash());
    }
}
