use std::collections::HashMap;

use super::{Check, CheckKind, CodeFamily, StabilizerCode};
use crate::gf2::BitVector;

/// Unrotated planar code on a `(2L-1) x (2L-1)` grid: data qubits where the
/// coordinate sum is even, Z-type checks at (even, odd), X-type at (odd, even).
pub(super) fn build(l: usize) -> StabilizerCode {
    let size = 2 * l - 1;
    let mut index = HashMap::new();
    let mut coords = Vec::new();
    for i in 0..size {
        for j in 0..size {
            if (i + j) % 2 == 0 {
                index.insert((i, j), coords.len());
                coords.push((i, j));
            }
        }
    }
    let n = coords.len();

    let neighbours = |i: usize, j: usize| {
        let mut q: Vec<usize> = [
            (i.wrapping_sub(1), j),
            (i + 1, j),
            (i, j.wrapping_sub(1)),
            (i, j + 1),
        ]
        .iter()
        .filter_map(|p| index.get(p).copied())
        .collect();
        q.sort_unstable();
        q
    };

    let mut checks = Vec::new();
    for (kind, parity) in [(CheckKind::Z, 0), (CheckKind::X, 1)] {
        for i in 0..size {
            for j in 0..size {
                if (i + j) % 2 == 1 && i % 2 == parity {
                    checks.push(Check {
                        kind,
                        coord: (i, j),
                        qubits: neighbours(i, j),
                    });
                }
            }
        }
    }

    let left_column: Vec<usize> = (0..l).map(|a| index[&(2 * a, 0)]).collect();
    let top_row: Vec<usize> = (0..l).map(|b| n + index[&(0, 2 * b)]).collect();
    let logicals = vec![
        BitVector::from_indices(2 * n, &left_column),
        BitVector::from_indices(2 * n, &top_row),
    ];

    StabilizerCode::assemble(CodeFamily::Surface, l, coords, checks, logicals)
}
