//! Minimum-weight perfect-matching decoder.
//!
//! Each check block of `H` is read as a graph: checks are nodes, and a column
//! touching two checks is an edge labelled by its qubit. Columns touching one
//! check connect it to a shared virtual boundary node. Distances and shortest
//! paths between all node pairs are tabulated once by breadth-first search,
//! visiting neighbours in ascending qubit order, so corrections are
//! deterministic.
//!
//! Perfect rounds are decoded by matching the defects (checks with `s = 1`).
//! For repeated noisy rounds, defects are detection events `s_t ⊕ s_{t-1}` at
//! `(check, t)` with weight `spatial distance + |Δt|`, and the final round is
//! taken as exact. When a periodic code ends with an odd number of defects,
//! one of them is matched to the time boundary at cost `T - t`.

use crate::codes::{Sector, SectorView, StabilizerCode};
use crate::error::{invalid, Result};
use crate::gf2::{BitMatrix, BitVector};
use crate::matching::{min_weight_perfect_matching, DefectGraph, NodeKind};
use crate::noise::{PauliError, SyndromeRun};

const UNREACHABLE: u32 = u32::MAX;

/// Shortest-path tables for one check block.
#[derive(Clone, Debug)]
pub struct MatchingGraph {
    n_checks: usize,
    n_qubits: usize,
    has_boundary: bool,
    /// `dist[a * nodes + b]`; the boundary node, if any, is index `n_checks`.
    dist: Vec<u32>,
    /// Last edge and predecessor on the tree rooted at `a`.
    via_qubit: Vec<u32>,
    via_node: Vec<u32>,
}

impl MatchingGraph {
    pub fn new(h: &BitMatrix) -> Result<Self> {
        let n_checks = h.rows();
        let n_qubits = h.cols();
        let mut edges = Vec::with_capacity(n_qubits);
        let mut has_boundary = false;
        for q in 0..n_qubits {
            let support = h.col_support(q);
            match support.len() {
                0 => {}
                1 => {
                    has_boundary = true;
                    edges.push((support[0], None, q));
                }
                2 => edges.push((support[0], Some(support[1]), q)),
                w => {
                    return Err(invalid(format!(
                        "qubit {q} is in {w} checks of one type; matching needs at most 2"
                    )))
                }
            }
        }
        let nodes = n_checks + usize::from(has_boundary);
        let boundary = n_checks;
        let mut adj: Vec<Vec<(u32, u32)>> = vec![Vec::new(); nodes];
        for &(a, b, q) in &edges {
            let b = b.unwrap_or(boundary);
            adj[a].push((b as u32, q as u32));
            adj[b].push((a as u32, q as u32));
        }

        let mut dist = vec![UNREACHABLE; nodes * nodes];
        let mut via_qubit = vec![u32::MAX; nodes * nodes];
        let mut via_node = vec![u32::MAX; nodes * nodes];
        let mut queue = std::collections::VecDeque::with_capacity(nodes);
        for src in 0..nodes {
            let row = src * nodes;
            dist[row + src] = 0;
            queue.clear();
            queue.push_back(src);
            while let Some(v) = queue.pop_front() {
                let dv = dist[row + v];
                for &(w, q) in &adj[v] {
                    let w = w as usize;
                    if dist[row + w] == UNREACHABLE {
                        dist[row + w] = dv + 1;
                        via_qubit[row + w] = q;
                        via_node[row + w] = v as u32;
                        queue.push_back(w);
                    }
                }
            }
        }
        Ok(Self {
            n_checks,
            n_qubits,
            has_boundary,
            dist,
            via_qubit,
            via_node,
        })
    }

    fn nodes(&self) -> usize {
        self.n_checks + usize::from(self.has_boundary)
    }

    pub fn n_checks(&self) -> usize {
        self.n_checks
    }

    pub fn has_boundary(&self) -> bool {
        self.has_boundary
    }

    /// Lattice distance between two checks, if connected.
    pub fn distance(&self, a: usize, b: usize) -> Option<u32> {
        let d = self.dist[a * self.nodes() + b];
        (d != UNREACHABLE).then_some(d)
    }

    /// Distance from a check to the open boundary, if there is one.
    pub fn boundary_distance(&self, a: usize) -> Option<u32> {
        if !self.has_boundary {
            return None;
        }
        self.distance(a, self.n_checks)
    }

    /// Flips the qubits of the tabulated shortest path from `a` to `b`
    /// (`b == n_checks` is the boundary).
    fn flip_path(&self, a: usize, b: usize, out: &mut BitVector) {
        let nodes = self.nodes();
        let row = a * nodes;
        let mut v = b;
        while v != a {
            out.flip(self.via_qubit[row + v] as usize);
            v = self.via_node[row + v] as usize;
        }
    }

    /// Decodes detection events `(check, round)` from a run of `rounds`
    /// rounds into a data correction on this block's qubits.
    pub fn decode_events(&self, events: &[(usize, usize)], rounds: usize) -> Result<BitVector> {
        let mut correction = BitVector::zeros(self.n_qubits);
        let k = events.len();
        if k == 0 {
            return Ok(correction);
        }
        let mut nodes: Vec<NodeKind> = events
            .iter()
            .map(|&(check, round)| NodeKind::Defect { check, round })
            .collect();
        let time_boundary = !self.has_boundary && k % 2 == 1;
        if self.has_boundary {
            nodes.extend(std::iter::repeat_n(NodeKind::Boundary, k));
        } else if time_boundary {
            nodes.push(NodeKind::TimeBoundary);
        }
        let mut g = DefectGraph::new(nodes);
        for i in 0..k {
            let (ci, ti) = events[i];
            for j in i + 1..k {
                let (cj, tj) = events[j];
                if let Some(d) = self.distance(ci, cj) {
                    g.add_edge(i, j, i64::from(d) + ti.abs_diff(tj) as i64)?;
                }
            }
            if self.has_boundary {
                if let Some(d) = self.boundary_distance(ci) {
                    g.add_edge(i, k + i, i64::from(d))?;
                }
                for j in i + 1..k {
                    g.add_edge(k + i, k + j, 0)?;
                }
            } else if time_boundary {
                g.add_edge(i, k, rounds.saturating_sub(ti) as i64)?;
            }
        }
        let m = min_weight_perfect_matching(&g)?;
        for (i, j) in m.pairs {
            if i >= k {
                continue;
            }
            let a = events[i].0;
            if j < k {
                self.flip_path(a, events[j].0, &mut correction);
            } else if self.has_boundary {
                self.flip_path(a, self.n_checks, &mut correction);
            }
        }
        Ok(correction)
    }
}

#[derive(Clone, Debug)]
struct Part {
    view: SectorView,
    graph: MatchingGraph,
}

/// Matching decoder for one sector; the joint sector is decoded as
/// independent `x` and `z` problems.
#[derive(Clone, Debug)]
pub struct MwpmDecoder {
    sector: Sector,
    n: usize,
    n_s: usize,
    parts: Vec<Part>,
}

impl MwpmDecoder {
    pub fn new(code: &StabilizerCode, sector: Sector) -> Result<Self> {
        let sectors: &[Sector] = match sector {
            Sector::Joint => &[Sector::X, Sector::Z],
            Sector::X => &[Sector::X],
            Sector::Z => &[Sector::Z],
        };
        let parts = sectors
            .iter()
            .map(|&s| {
                let view = code.view(s);
                let graph = MatchingGraph::new(&view.h)?;
                Ok(Part { view, graph })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sector,
            n: code.n(),
            n_s: code.n_s(),
            parts,
        })
    }

    pub fn sector(&self) -> Sector {
        self.sector
    }

    /// Estimate of the sector's error (`x`, `z` or `[x | z]`) from one
    /// perfect syndrome of the whole code.
    pub fn decode_syndrome(&self, s: &BitVector) -> Result<BitVector> {
        self.decode_rounds(std::slice::from_ref(s))
    }

    /// Estimate from repeated syndromes of the whole code.
    pub fn decode_rounds(&self, syndromes: &[BitVector]) -> Result<BitVector> {
        if syndromes.is_empty() {
            return Err(invalid("at least one syndrome round is required"));
        }
        if let Some(bad) = syndromes.iter().find(|s| s.len() != self.n_s) {
            return Err(invalid(format!("syndrome has {} bits, code has {}", bad.len(), self.n_s)));
        }
        let mut out = BitVector::zeros(self.n * self.parts.len());
        for (pi, part) in self.parts.iter().enumerate() {
            let mut events = Vec::new();
            let mut prev = BitVector::zeros(part.view.n_s());
            for (t, s) in syndromes.iter().enumerate() {
                let cur = part.view.syndrome_slice(s);
                let mut diff = cur.clone();
                diff.xor_assign(&prev)?;
                events.extend(diff.iter_ones().map(|c| (c, t)));
                prev = cur;
            }
            let c = part.graph.decode_events(&events, syndromes.len())?;
            for q in c.iter_ones() {
                out.set(pi * self.n + q, true);
            }
        }
        Ok(out)
    }
}

fn to_pauli(code: &StabilizerCode, v: &BitVector) -> PauliError {
    debug_assert_eq!(v.len(), code.n_err());
    PauliError::from_vector(v)
}

/// Decodes a perfect syndrome with independent `x` and `z` matchings.
///
/// ```
/// use qecc_lab::codes::StabilizerCode;
/// use qecc_lab::mwpm::decode_mwpm;
/// use qecc_lab::noise::PauliError;
///
/// let code = StabilizerCode::toric(4).unwrap();
/// let mut e = PauliError::identity(code.n());
/// e.x.set(5, true);
/// let s = code.syndrome(&e).unwrap();
/// assert_eq!(decode_mwpm(&code, &s).unwrap(), e);
/// ```
pub fn decode_mwpm(code: &StabilizerCode, s: &BitVector) -> Result<PauliError> {
    let v = MwpmDecoder::new(code, Sector::Joint)?.decode_syndrome(s)?;
    Ok(to_pauli(code, &v))
}

/// Decodes a run of noisy syndrome rounds by space-time matching.
pub fn decode_mwpm_spacetime(code: &StabilizerCode, run: &SyndromeRun) -> Result<PauliError> {
    let v = MwpmDecoder::new(code, Sector::Joint)?.decode_rounds(&run.syndromes)?;
    Ok(to_pauli(code, &v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_faulty_run, sample_perfect_run, Channel, StreamRng};
    use rand::Rng;

    #[test]
    fn zero_syndrome_gives_zero_correction() {
        for code in [StabilizerCode::toric(4).unwrap(), StabilizerCode::surface(3).unwrap()] {
            let s = BitVector::zeros(code.n_s());
            assert!(decode_mwpm(&code, &s).unwrap().is_identity());
        }
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let code = StabilizerCode::toric(3).unwrap();
        assert!(decode_mwpm(&code, &BitVector::zeros(5)).is_err());
    }

    #[test]
    fn toric_distances_wrap_around() {
        let code = StabilizerCode::toric(5).unwrap();
        let g = MatchingGraph::new(&code.hz()).unwrap();
        assert!(!g.has_boundary());
        // Plaquettes are indexed r * L + c.
        assert_eq!(g.distance(0, 4), Some(1));
        assert_eq!(g.distance(0, 20), Some(1));
        assert_eq!(g.distance(0, 2 * 5 + 2), Some(4));
        for a in 0..25usize {
            for b in 0..25 {
                let (ra, ca, rb, cb) = (a / 5, a % 5, b / 5, b % 5);
                let dr = ra.abs_diff(rb).min(5 - ra.abs_diff(rb));
                let dc = ca.abs_diff(cb).min(5 - ca.abs_diff(cb));
                assert_eq!(g.distance(a, b), Some((dr + dc) as u32));
            }
        }
    }

    #[test]
    fn surface_has_boundary() {
        let code = StabilizerCode::surface(3).unwrap();
        for h in [code.hz(), code.hx()] {
            let g = MatchingGraph::new(&h).unwrap();
            assert!(g.has_boundary());
            assert!((0..g.n_checks()).all(|c| g.boundary_distance(c).unwrap() >= 1));
        }
    }

    #[test]
    fn paths_realise_distances() {
        let code = StabilizerCode::toric(4).unwrap();
        let h = code.hz();
        let g = MatchingGraph::new(&h).unwrap();
        for a in 0..16 {
            for b in 0..16 {
                let mut path = BitVector::zeros(code.n());
                g.flip_path(a, b, &mut path);
                assert_eq!(path.weight() as u32, g.distance(a, b).unwrap());
                let s = h.matvec(&path).unwrap();
                let expect = if a == b { vec![] } else { vec![a.min(b), a.max(b)] };
                assert_eq!(s.iter_ones().collect::<Vec<_>>(), expect);
            }
        }
    }

    #[test]
    fn single_errors_on_toric_are_corrected_exactly() {
        let code = StabilizerCode::toric(4).unwrap();
        for q in 0..code.n() {
            for z in [false, true] {
                let mut e = PauliError::identity(code.n());
                if z {
                    e.z.set(q, true);
                } else {
                    e.x.set(q, true);
                }
                let s = code.syndrome(&e).unwrap();
                assert_eq!(decode_mwpm(&code, &s).unwrap(), e);
            }
        }
    }

    #[test]
    fn low_weight_errors_are_corrected_up_to_stabilizers() {
        let mut rng = StreamRng::from_seed(5);
        for code in [StabilizerCode::toric(5).unwrap(), StabilizerCode::surface(5).unwrap()] {
            let dec = MwpmDecoder::new(&code, Sector::Joint).unwrap();
            for _ in 0..500 {
                let mut e = PauliError::identity(code.n());
                for _ in 0..2 {
                    let q = rng.random_range(0..code.n());
                    match rng.random_range(0..3) {
                        0 => e.x.flip(q),
                        1 => e.z.flip(q),
                        _ => {
                            e.x.flip(q);
                            e.z.flip(q);
                        }
                    }
                }
                let s = code.syndrome(&e).unwrap();
                let est = to_pauli(&code, &dec.decode_syndrome(&s).unwrap());
                let residual = e.compose(&est);
                assert!(code.syndrome(&residual).unwrap().is_zero());
                assert!(code.logical_projection(&residual).unwrap().is_zero(), "{code:?}");
            }
        }
    }

    #[test]
    fn corrections_reproduce_the_syndrome() {
        let settings = [
            (StabilizerCode::toric(6).unwrap(), Channel::Independent, 0.05),
            (StabilizerCode::toric(4).unwrap(), Channel::Depolarizing, 0.15),
            (StabilizerCode::surface(4).unwrap(), Channel::Independent, 0.1),
            (StabilizerCode::surface(5).unwrap(), Channel::Depolarizing, 0.15),
        ];
        for (i, (code, channel, p)) in settings.iter().enumerate() {
            let dec = MwpmDecoder::new(code, Sector::Joint).unwrap();
            let mut rng = StreamRng::derive(1, &[i as u64]);
            for _ in 0..2000 {
                let run = sample_perfect_run(code, *channel, *p, &mut rng).unwrap();
                let est = to_pauli(code, &dec.decode_syndrome(run.final_syndrome()).unwrap());
                assert_eq!(&code.syndrome(&est).unwrap(), run.final_syndrome());
            }
        }
    }

    #[test]
    fn single_sector_decoders_agree_with_joint() {
        let code = StabilizerCode::surface(4).unwrap();
        let joint = MwpmDecoder::new(&code, Sector::Joint).unwrap();
        let xs = MwpmDecoder::new(&code, Sector::X).unwrap();
        let zs = MwpmDecoder::new(&code, Sector::Z).unwrap();
        let mut rng = StreamRng::from_seed(9);
        for _ in 0..200 {
            let run = sample_perfect_run(&code, Channel::Depolarizing, 0.12, &mut rng).unwrap();
            let s = run.final_syndrome();
            let j = joint.decode_syndrome(s).unwrap();
            assert_eq!(j.slice(0, code.n()), xs.decode_syndrome(s).unwrap());
            assert_eq!(j.slice(code.n(), code.n()), zs.decode_syndrome(s).unwrap());
        }
    }

    #[test]
    fn spacetime_all_zero_run() {
        let code = StabilizerCode::toric(4).unwrap();
        let run = sample_faulty_run(&code, Channel::Independent, 0.0, 0.0, 4, &mut StreamRng::from_seed(0)).unwrap();
        assert!(decode_mwpm_spacetime(&code, &run).unwrap().is_identity());
    }

    #[test]
    fn single_measurement_flip_is_matched_in_time() {
        for code in [StabilizerCode::toric(4).unwrap(), StabilizerCode::surface(4).unwrap()] {
            let rounds = 4;
            for check in [0, code.n_s() - 1] {
                for t in 0..rounds - 1 {
                    let mut run =
                        sample_faulty_run(&code, Channel::Independent, 0.0, 0.0, rounds, &mut StreamRng::from_seed(0))
                            .unwrap();
                    run.measurement_errors[t].set(check, true);
                    run.syndromes[t].set(check, true);
                    assert!(decode_mwpm_spacetime(&code, &run).unwrap().is_identity());
                }
            }
        }
    }

    #[test]
    fn one_round_equals_static_decoding() {
        let code = StabilizerCode::toric(5).unwrap();
        let mut rng = StreamRng::from_seed(2);
        for _ in 0..300 {
            let run = sample_faulty_run(&code, Channel::Depolarizing, 0.1, 0.0, 1, &mut rng).unwrap();
            assert_eq!(
                decode_mwpm_spacetime(&code, &run).unwrap(),
                decode_mwpm(&code, run.final_syndrome()).unwrap()
            );
        }
    }

    #[test]
    fn errors_confined_to_the_first_round_decode_statically() {
        let code = StabilizerCode::surface(4).unwrap();
        let mut rng = StreamRng::from_seed(3);
        for _ in 0..300 {
            let mut run = sample_faulty_run(&code, Channel::Independent, 0.08, 0.0, 1, &mut rng).unwrap();
            for _ in 0..3 {
                run.syndromes.push(run.syndromes[0].clone());
            }
            assert_eq!(
                decode_mwpm_spacetime(&code, &run).unwrap(),
                decode_mwpm(&code, &run.syndromes[0]).unwrap()
            );
        }
    }

    #[test]
    fn perfect_measurements_give_valid_spacetime_corrections() {
        for (i, code) in [StabilizerCode::toric(4).unwrap(), StabilizerCode::surface(4).unwrap()].iter().enumerate() {
            let dec = MwpmDecoder::new(code, Sector::Joint).unwrap();
            let mut rng = StreamRng::derive(4, &[i as u64]);
            for _ in 0..1000 {
                let run = sample_faulty_run(code, Channel::Depolarizing, 0.03, 0.0, 4, &mut rng).unwrap();
                let est = to_pauli(code, &dec.decode_rounds(&run.syndromes).unwrap());
                assert_eq!(code.syndrome(&est).unwrap(), code.syndrome(&run.cumulative_error).unwrap());
            }
        }
    }

    #[test]
    fn noisy_rounds_always_decode() {
        let code = StabilizerCode::toric(4).unwrap();
        let dec = MwpmDecoder::new(&code, Sector::X).unwrap();
        let mut rng = StreamRng::from_seed(8);
        for _ in 0..500 {
            let run = sample_faulty_run(&code, Channel::Independent, 0.03, 0.03, 4, &mut rng).unwrap();
            let est = dec.decode_rounds(&run.syndromes).unwrap();
            assert_eq!(est.len(), code.n());
        }
    }
}
