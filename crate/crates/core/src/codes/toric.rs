use super::{Check, CheckKind, CodeFamily, StabilizerCode};
use crate::gf2::BitVector;

pub(super) fn build(l: usize) -> StabilizerCode {
    let n = 2 * l * l;
    let h = |r: usize, c: usize| (r % l) * l + (c % l);
    let v = |r: usize, c: usize| l * l + (r % l) * l + (c % l);

    // Doubled-lattice coordinates: vertices at (even, even), plaquettes at (odd, odd).
    let mut coords = Vec::with_capacity(n);
    for r in 0..l {
        for c in 0..l {
            coords.push((2 * r, 2 * c + 1));
        }
    }
    for r in 0..l {
        for c in 0..l {
            coords.push((2 * r + 1, 2 * c));
        }
    }

    let mut checks = Vec::with_capacity(2 * l * l);
    for r in 0..l {
        for c in 0..l {
            checks.push(Check {
                kind: CheckKind::Z,
                coord: (2 * r + 1, 2 * c + 1),
                qubits: sorted(vec![h(r, c), h(r + 1, c), v(r, c), v(r, c + 1)]),
            });
        }
    }
    for r in 0..l {
        for c in 0..l {
            checks.push(Check {
                kind: CheckKind::X,
                coord: (2 * r, 2 * c),
                qubits: sorted(vec![h(r, c), h(r, c + l - 1), v(r, c), v(r + l - 1, c)]),
            });
        }
    }

    let row = |offset: usize, qubits: Vec<usize>| {
        BitVector::from_indices(2 * n, &qubits.into_iter().map(|q| offset + q).collect::<Vec<_>>())
    };
    let logicals = vec![
        // Z loops along the primal lattice read out X-error logical flips.
        row(0, (0..l).map(|c| h(0, c)).collect()),
        row(0, (0..l).map(|r| v(r, 0)).collect()),
        // X loops along the dual lattice read out Z-error logical flips.
        row(n, (0..l).map(|r| h(r, 0)).collect()),
        row(n, (0..l).map(|c| v(0, c)).collect()),
    ];

    StabilizerCode::assemble(CodeFamily::Toric, l, coords, checks, logicals)
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}
