//! Code export container.
//!
//! A human-readable header terminated by an empty line, followed by three
//! `GF2M` matrices: `H`, `𝕃` and the attention mask.
//!
//! ```text
//! # qecc-lab code
//! family=toric
//! L=2
//! n=8
//! n_s=8
//! n_err=16
//! n_log=4
//! hash=0123456789abcdef
//! qubit 0 0 1
//! ...
//! check 0 Z 1 1
//! ...
//!
//! <GF2M H><GF2M L><GF2M mask>
//! ```

use std::io::{BufRead, Write};

use super::{CheckKind, StabilizerCode};
use crate::error::{format_err, Result};
use crate::gf2::BitMatrix;

const WHAT: &str = "code file";

pub fn write_code_file<W: Write>(code: &StabilizerCode, w: &mut W) -> Result<()> {
    writeln!(w, "# qecc-lab code")?;
    writeln!(w, "family={}", code.family())?;
    writeln!(w, "L={}", code.distance())?;
    writeln!(w, "n={}", code.n())?;
    writeln!(w, "n_s={}", code.n_s())?;
    writeln!(w, "n_err={}", code.n_err())?;
    writeln!(w, "n_log={}", code.n_logical())?;
    writeln!(w, "hash={:016x}", code.hash())?;
    for (q, (r, c)) in code.qubit_coords().iter().enumerate() {
        writeln!(w, "qubit {q} {r} {c}")?;
    }
    for (i, check) in code.checks().iter().enumerate() {
        let kind = match check.kind {
            CheckKind::X => "X",
            CheckKind::Z => "Z",
        };
        writeln!(w, "check {i} {kind} {} {}", check.coord.0, check.coord.1)?;
    }
    writeln!(w)?;
    code.parity_check().write_to(w)?;
    code.logicals().write_to(w)?;
    code.mask().bits().write_to(w)?;
    Ok(())
}

/// Reads a code file, rebuilding the code from its family and size and
/// checking the stored matrices against the rebuilt ones.
pub fn read_code_file<R: BufRead>(r: &mut R) -> Result<StabilizerCode> {
    let mut family = None;
    let mut l = None;
    let mut line = String::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(format_err(WHAT, "missing header terminator"));
        }
        let text = line.trim_end_matches(['\n', '\r']);
        if text.is_empty() {
            break;
        }
        if let Some(v) = text.strip_prefix("family=") {
            family = Some(v.parse()?);
        } else if let Some(v) = text.strip_prefix("L=") {
            l = Some(
                v.parse::<usize>()
                    .map_err(|_| format_err(WHAT, format!("bad L {v:?}")))?,
            );
        }
    }
    let (Some(family), Some(l)) = (family, l) else {
        return Err(format_err(WHAT, "header lacks family or L"));
    };
    let code = StabilizerCode::build(family, l)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    let mut cursor = rest.as_slice();
    let h = BitMatrix::read_from(&mut cursor)?;
    let logicals = BitMatrix::read_from(&mut cursor)?;
    let _mask = BitMatrix::read_from(&mut cursor)?;
    if &h != code.parity_check() || &logicals != code.logicals() {
        return Err(format_err(WHAT, "stored matrices disagree with the code family"));
    }
    Ok(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn export_and_reload() {
        let code = StabilizerCode::toric(2).unwrap();
        let mut buf = Vec::new();
        write_code_file(&code, &mut buf).unwrap();
        let text_end = buf.windows(2).position(|w| w == b"\n\n").unwrap() + 2;
        let header = std::str::from_utf8(&buf[..text_end]).unwrap();
        assert!(header.contains("family=toric\nL=2\nn=8\nn_s=8\n"));

        let mut bin = &buf[text_end..];
        let h = BitMatrix::read_from(&mut bin).unwrap();
        assert_eq!((h.rows(), h.cols()), (8, 16));

        let back = read_code_file(&mut buf.as_slice()).unwrap();
        assert_eq!(back.hash(), code.hash());
    }

    #[test]
    fn corrupt_matrix_is_rejected() {
        let code = StabilizerCode::surface(3).unwrap();
        let mut buf = Vec::new();
        write_code_file(&code, &mut buf).unwrap();
        let text_end = buf.windows(2).position(|w| w == b"\n\n").unwrap() + 2;
        buf[text_end + 12] ^= 1;
        assert!(read_code_file(&mut buf.as_slice()).is_err());
    }
}
