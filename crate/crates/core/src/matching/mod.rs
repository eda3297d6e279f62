//! Exact minimum-weight perfect matching on small weighted graphs.

mod blossom;

use crate::error::{invalid, Result};

/// Role of a node in a defect graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    /// A detection event at `(check, round)`.
    Defect { check: usize, round: usize },
    /// Virtual partner on the open boundary of a planar code.
    Boundary,
    /// Virtual partner on the final, perfectly measured round.
    TimeBoundary,
}

/// Undirected graph with integer weights. Missing edges are simply absent.
#[derive(Clone, Debug, Default)]
pub struct DefectGraph {
    nodes: Vec<NodeKind>,
    edges: Vec<(usize, usize, i64)>,
}

impl DefectGraph {
    pub fn new(nodes: Vec<NodeKind>) -> Self {
        Self { nodes, edges: Vec::new() }
    }

    /// Complete graph over `n` anonymous defects with weights from `w(i, j)`.
    pub fn complete(n: usize, mut w: impl FnMut(usize, usize) -> i64) -> Self {
        let nodes = (0..n).map(|i| NodeKind::Defect { check: i, round: 0 }).collect();
        let mut g = Self::new(nodes);
        for i in 0..n {
            for j in i + 1..n {
                g.edges.push((i, j, w(i, j)));
            }
        }
        g
    }

    /// Adds the edge `{i, j}`. Weights must be nonnegative.
    pub fn add_edge(&mut self, i: usize, j: usize, w: i64) -> Result<()> {
        if i == j || i >= self.nodes.len() || j >= self.nodes.len() {
            return Err(invalid(format!("edge ({i}, {j}) outside a graph of {} nodes", self.nodes.len())));
        }
        if w < 0 {
            return Err(invalid(format!("negative edge weight {w}")));
        }
        self.edges.push((i.min(j), i.max(j), w));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeKind] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize, i64)] {
        &self.edges
    }

    fn has_virtual_nodes(&self) -> bool {
        self.nodes.iter().any(|n| !matches!(n, NodeKind::Defect { .. }))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matching {
    /// Matched node pairs `(i, j)` with `i < j`, sorted.
    pub pairs: Vec<(usize, usize)>,
    pub total_weight: i64,
}

/// Minimum-weight perfect matching via the blossom algorithm.
///
/// ```
/// use qecc_lab::matching::{min_weight_perfect_matching, DefectGraph};
///
/// let w = [[0, 1, 2, 2], [1, 0, 2, 2], [2, 2, 0, 1], [2, 2, 1, 0]];
/// let g = DefectGraph::complete(4, |i, j| w[i][j]);
/// let m = min_weight_perfect_matching(&g).unwrap();
/// assert_eq!(m.pairs, vec![(0, 1), (2, 3)]);
/// assert_eq!(m.total_weight, 2);
/// ```
pub fn min_weight_perfect_matching(g: &DefectGraph) -> Result<Matching> {
    let n = g.len();
    if n % 2 == 1 {
        let what = if g.has_virtual_nodes() { "" } else { " without boundary nodes" };
        return Err(invalid(format!("odd node count {n}{what}")));
    }
    if n == 0 {
        return Ok(Matching { pairs: Vec::new(), total_weight: 0 });
    }
    // Maximum-cardinality, maximum-weight matching on C - w minimises Σw
    // among perfect matchings.
    let c = g.edges.iter().map(|e| e.2).max().unwrap_or(0) + 1;
    let flipped: Vec<(usize, usize, i64)> = g.edges.iter().map(|&(i, j, w)| (i, j, c - w)).collect();
    let mate = blossom::max_weight_matching(n, &flipped, true);

    let mut pairs = Vec::with_capacity(n / 2);
    for (i, m) in mate.iter().enumerate() {
        match m {
            Some(j) if i < *j => pairs.push((i, *j)),
            Some(_) => {}
            None => return Err(invalid(format!("graph has no perfect matching (node {i} unmatched)"))),
        }
    }
    // Parallel edges: the algorithm picks the cheapest, so report that.
    let mut best = vec![i64::MAX; n * n];
    for &(i, j, w) in &g.edges {
        let slot = &mut best[i.min(j) * n + i.max(j)];
        *slot = (*slot).min(w);
    }
    let total_weight = pairs.iter().map(|&(i, j)| best[i * n + j]).sum();
    Ok(Matching { pairs, total_weight })
}

/// Exhaustive minimum over all perfect matchings; `None` if none exists.
/// Exponential; meant as a reference for small graphs.
pub fn brute_force_min_matching(g: &DefectGraph) -> Option<i64> {
    let n = g.len();
    if n % 2 == 1 {
        return None;
    }
    let mut w = vec![None::<i64>; n * n];
    for &(i, j, wt) in &g.edges {
        for (a, b) in [(i, j), (j, i)] {
            let slot = &mut w[a * n + b];
            *slot = Some(slot.map_or(wt, |old: i64| old.min(wt)));
        }
    }
    fn go(n: usize, w: &[Option<i64>], used: &mut [bool]) -> Option<i64> {
        let Some(i) = used.iter().position(|&u| !u) else {
            return Some(0);
        };
        used[i] = true;
        let mut best: Option<i64> = None;
        for j in i + 1..n {
            if used[j] {
                continue;
            }
            if let Some(wij) = w[i * n + j] {
                used[j] = true;
                if let Some(rest) = go(n, w, used) {
                    let total = wij + rest;
                    best = Some(best.map_or(total, |b| b.min(total)));
                }
                used[j] = false;
            }
        }
        used[i] = false;
        best
    }
    go(n, &w, &mut vec![false; n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256StarStar;

    #[test]
    fn empty_graph() {
        let m = min_weight_perfect_matching(&DefectGraph::default()).unwrap();
        assert!(m.pairs.is_empty());
        assert_eq!(m.total_weight, 0);
    }

    #[test]
    fn odd_graph_is_rejected() {
        let g = DefectGraph::complete(3, |_, _| 1);
        assert!(min_weight_perfect_matching(&g).is_err());
    }

    #[test]
    fn k4_example() {
        // a, b, c, d = 0, 1, 2, 3
        let g = DefectGraph::complete(4, |i, j| if (i, j) == (0, 1) || (i, j) == (2, 3) { 1 } else { 2 });
        assert_eq!(brute_force_min_matching(&g), Some(2));
        let m = min_weight_perfect_matching(&g).unwrap();
        assert_eq!(m.pairs, vec![(0, 1), (2, 3)]);
        assert_eq!(m.total_weight, 2);
    }

    #[test]
    fn random_complete_graphs_match_brute_force() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(7);
        for _ in 0..1000 {
            let n = 2 * rng.random_range(1..=4);
            let hi = rng.random_range(1..=20);
            let g = DefectGraph::complete(n, |_, _| rng.random_range(0..=hi));
            let m = min_weight_perfect_matching(&g).unwrap();
            assert_eq!(Some(m.total_weight), brute_force_min_matching(&g));
            let mut seen = vec![false; n];
            for &(i, j) in &m.pairs {
                assert!(!seen[i] && !seen[j]);
                seen[i] = true;
                seen[j] = true;
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn random_sparse_graphs_match_brute_force() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(11);
        let mut checked = 0;
        while checked < 1000 {
            let n = 2 * rng.random_range(1..=4);
            let mut g = DefectGraph::new((0..n).map(|i| NodeKind::Defect { check: i, round: 0 }).collect());
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random_bool(0.6) {
                        g.add_edge(i, j, rng.random_range(0..=12)).unwrap();
                    }
                }
            }
            match brute_force_min_matching(&g) {
                Some(best) => {
                    assert_eq!(min_weight_perfect_matching(&g).unwrap().total_weight, best);
                    checked += 1;
                }
                None => assert!(min_weight_perfect_matching(&g).is_err()),
            }
        }
    }

    #[test]
    fn larger_instances_are_perfect_and_no_worse_than_greedy() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(3);
        for _ in 0..50 {
            let n = 40;
            let pts: Vec<(i64, i64)> = (0..n).map(|_| (rng.random_range(0..30), rng.random_range(0..30))).collect();
            let d = |i: usize, j: usize| (pts[i].0 - pts[j].0).abs() + (pts[i].1 - pts[j].1).abs();
            let g = DefectGraph::complete(n, d);
            let m = min_weight_perfect_matching(&g).unwrap();
            assert_eq!(m.pairs.len(), n / 2);
            let mut used = vec![false; n];
            let mut greedy = 0;
            for i in 0..n {
                if used[i] {
                    continue;
                }
                used[i] = true;
                let j = (0..n).filter(|&j| !used[j]).min_by_key(|&j| d(i, j)).unwrap();
                used[j] = true;
                greedy += d(i, j);
            }
            assert!(m.total_weight <= greedy);
        }
    }
}
