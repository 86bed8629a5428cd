//! Bipartite holder–fund graph with sorted adjacency on both sides.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Holder,
    Fund,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeRef {
    pub kind: NodeKind,
    pub index: usize,
}

impl NodeRef {
    pub fn holder(index: usize) -> Self {
        Self {
            kind: NodeKind::Holder,
            index,
        }
    }

    pub fn fund(index: usize) -> Self {
        Self {
            kind: NodeKind::Fund,
            index,
        }
    }
}

/// `(holder index, fund index)`.
pub type Edge = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabeledEdge {
    pub holder: usize,
    pub fund: usize,
    pub label: u8,
}

/// Undirected bipartite graph. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    num_holders: usize,
    num_funds: usize,
    holder_adj: Vec<Vec<usize>>,
    fund_adj: Vec<Vec<usize>>,
    edges: Vec<Edge>,
}

impl BipartiteGraph {
    /// Builds a graph, dropping duplicate edges. The edge list ends up sorted
    /// lexicographically and every adjacency list ascending.
    pub fn build(num_holders: usize, num_funds: usize, edges: &[Edge]) -> Result<Self> {
        for &(h, f) in edges {
            if h >= num_holders || f >= num_funds {
                return Err(Error::EdgeOutOfRange {
                    holder: h,
                    fund: f,
                    num_holders,
                    num_funds,
                });
            }
        }
        let mut list = edges.to_vec();
        list.sort_unstable();
        list.dedup();
        let mut holder_adj = vec![Vec::new(); num_holders];
        let mut fund_adj = vec![Vec::new(); num_funds];
        // Sorted edge order makes both adjacency sides ascending.
        for &(h, f) in &list {
            holder_adj[h].push(f);
            fund_adj[f].push(h);
        }
        Ok(Self {
            num_holders,
            num_funds,
            holder_adj,
            fund_adj,
            edges: list,
        })
    }

    pub fn num_holders(&self) -> usize {
        self.num_holders
    }

    pub fn num_funds(&self) -> usize {
        self.num_funds
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn holder_adj(&self) -> &[Vec<usize>] {
        &self.holder_adj
    }

    pub fn fund_adj(&self) -> &[Vec<usize>] {
        &self.fund_adj
    }

    fn check_node(&self, node: NodeRef) -> Result<()> {
        let count = match node.kind {
            NodeKind::Holder => self.num_holders,
            NodeKind::Fund => self.num_funds,
        };
        if node.index >= count {
            return Err(Error::NodeOutOfRange {
                kind: node.kind,
                index: node.index,
                count,
            });
        }
        Ok(())
    }

    /// Opposite-kind neighbours in ascending order.
    pub fn neighbors(&self, node: NodeRef) -> Result<&[usize]> {
        self.check_node(node)?;
        Ok(match node.kind {
            NodeKind::Holder => &self.holder_adj[node.index],
            NodeKind::Fund => &self.fund_adj[node.index],
        })
    }

    pub fn degree(&self, node: NodeRef) -> Result<usize> {
        self.neighbors(node).map(<[usize]>::len)
    }

    pub fn has_edge(&self, holder: usize, fund: usize) -> bool {
        holder < self.num_holders && self.holder_adj[holder].binary_search(&fund).is_ok()
    }

    pub fn is_complete(&self) -> bool {
        self.edges.len() == self.num_holders * self.num_funds
    }

    /// Labelled view of the edge list (all label 1).
    pub fn labeled_edges(&self) -> Vec<LabeledEdge> {
        self.edges
            .iter()
            .map(|&(holder, fund)| LabeledEdge {
                holder,
                fund,
                label: 1,
            })
            .collect()
    }
}

/// Draws distinct non-edges by corrupting the fund side of the given
/// positives, cycling through them until `count` negatives exist or the
/// non-edge pool is used up.
///
/// Each draw tries up to 100 uniform fund picks before enumerating the
/// holder's remaining non-adjacent funds, and finally the global pool.
pub(crate) fn corrupt_funds<R: Rng>(
    graph: &BipartiteGraph,
    positives: &[Edge],
    count: usize,
    exclude: &HashSet<Edge>,
    rng: &mut R,
) -> Vec<Edge> {
    const MAX_ATTEMPTS: usize = 100;
    let mut taken: HashSet<Edge> = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let mut global_pool: Option<Vec<Edge>> = None;
    let free = |h: usize, f: usize, taken: &HashSet<Edge>| {
        !graph.has_edge(h, f) && !exclude.contains(&(h, f)) && !taken.contains(&(h, f))
    };
    if positives.is_empty() || graph.num_funds == 0 {
        return out;
    }
    let mut i = 0;
    while out.len() < count {
        let (h, _) = positives[i % positives.len()];
        i += 1;
        let mut pick = None;
        for _ in 0..MAX_ATTEMPTS {
            let f = rng.gen_range(0..graph.num_funds);
            if free(h, f, &taken) {
                pick = Some((h, f));
                break;
            }
        }
        if pick.is_none() {
            let local: Vec<usize> = (0..graph.num_funds).filter(|&f| free(h, f, &taken)).collect();
            pick = local.choose(rng).map(|&f| (h, f));
        }
        if pick.is_none() {
            let pool = global_pool.get_or_insert_with(|| {
                (0..graph.num_holders)
                    .flat_map(|h| (0..graph.num_funds).map(move |f| (h, f)))
                    .filter(|&(h, f)| !graph.has_edge(h, f) && !exclude.contains(&(h, f)))
                    .collect()
            });
            pool.retain(|e| !taken.contains(e));
            if pool.is_empty() {
                break;
            }
            pick = Some(pool[rng.gen_range(0..pool.len())]);
        }
        let e = pick.expect("pick resolved above");
        taken.insert(e);
        out.push(e);
    }
    out
}

/// `round(ratio × |E|)` label-0 edges absent from the graph, deterministic in
/// `seed`. Fewer are returned only when the non-edge pool runs out.
pub fn sample_negative_edges(graph: &BipartiteGraph, ratio: f64, seed: u64) -> Result<Vec<LabeledEdge>> {
    if !(ratio.is_finite() && ratio >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative ratio {ratio}")));
    }
    if graph.is_complete() {
        return Err(Error::NoNegativeEdges);
    }
    let count = (ratio * graph.num_edges() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let neg = corrupt_funds(graph, graph.edges(), count, &HashSet::new(), &mut rng);
    Ok(neg
        .into_iter()
        .map(|(holder, fund)| LabeledEdge {
            holder,
            fund,
            label: 0,
        })
        .collect())
}

/// Held-out positives and matching negatives for link-prediction testing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSplit {
    pub train_pos: Vec<Edge>,
    pub test_pos: Vec<Edge>,
    pub test_neg: Vec<Edge>,
    pub seed: u64,
}

/// Uniform random partition of the positive edges plus `|test_pos|`
/// negatives drawn from pairs absent in the full graph.
pub fn split_edges(graph: &BipartiteGraph, test_fraction: f64, seed: u64) -> Result<EdgeSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidSplit(format!(
            "test fraction {test_fraction} must lie strictly between 0 and 1"
        )));
    }
    let n = graph.num_edges();
    let n_test = (test_fraction * n as f64).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::InvalidSplit(format!(
            "{n} edges cannot be split at fraction {test_fraction}"
        )));
    }
    if graph.is_complete() {
        return Err(Error::NoNegativeEdges);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = graph.edges().to_vec();
    shuffled.shuffle(&mut rng);
    let mut test_pos = shuffled[..n_test].to_vec();
    let mut train_pos = shuffled[n_test..].to_vec();
    test_pos.sort_unstable();
    train_pos.sort_unstable();
    let test_neg = corrupt_funds(graph, &test_pos, n_test, &HashSet::new(), &mut rng);
    if test_neg.len() < n_test {
        return Err(Error::InvalidSplit(format!(
            "only {} non-edges available for {n_test} test positives",
            test_neg.len()
        )));
    }
    Ok(EdgeSplit {
        train_pos,
        test_pos,
        test_neg,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BipartiteGraph {
        BipartiteGraph::build(3, 2, &[(0, 0), (0, 1), (1, 0), (2, 1)]).unwrap()
    }

    #[test]
    fn dedups_edges() {
        let g = BipartiteGraph::build(2, 2, &[(0, 0), (0, 0), (1, 1)]).unwrap();
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.neighbors(NodeRef::holder(0)).unwrap(), &[0]);
    }

    #[test]
    fn empty_graph() {
        let g = BipartiteGraph::build(1, 1, &[]).unwrap();
        assert_eq!(g.degree(NodeRef::holder(0)).unwrap(), 0);
        assert_eq!(g.degree(NodeRef::fund(0)).unwrap(), 0);
    }

    #[test]
    fn degrees_and_neighbors() {
        let g = sample();
        let hd: Vec<usize> = (0..3).map(|h| g.degree(NodeRef::holder(h)).unwrap()).collect();
        let fd: Vec<usize> = (0..2).map(|f| g.degree(NodeRef::fund(f)).unwrap()).collect();
        assert_eq!(hd, vec![2, 1, 1]);
        assert_eq!(fd, vec![2, 2]);
        assert_eq!(g.neighbors(NodeRef::holder(0)).unwrap(), &[0, 1]);
        assert_eq!(g.neighbors(NodeRef::fund(0)).unwrap(), &[0, 1]);
    }

    #[test]
    fn isolated_node_has_no_neighbors() {
        let g = BipartiteGraph::build(3, 3, &[(0, 0)]).unwrap();
        assert!(g.neighbors(NodeRef::fund(2)).unwrap().is_empty());
    }

    #[test]
    fn out_of_range() {
        let err = BipartiteGraph::build(2, 2, &[(0, 0), (2, 1)]).unwrap_err();
        assert_eq!(
            err,
            Error::EdgeOutOfRange {
                holder: 2,
                fund: 1,
                num_holders: 2,
                num_funds: 2
            }
        );
        let g = sample();
        assert!(matches!(
            g.neighbors(NodeRef::fund(5)),
            Err(Error::NodeOutOfRange { kind: NodeKind::Fund, index: 5, count: 2 })
        ));
    }

    #[test]
    fn complete_graph_has_no_negatives() {
        let g = BipartiteGraph::build(2, 2, &[(0, 0), (0, 1), (1, 0), (1, 1)]).unwrap();
        assert_eq!(sample_negative_edges(&g, 1.0, 3), Err(Error::NoNegativeEdges));
    }

    #[test]
    fn forced_negative_pool() {
        let g = BipartiteGraph::build(2, 2, &[(0, 0), (1, 1)]).unwrap();
        for seed in 0..20 {
            let neg = sample_negative_edges(&g, 1.0, seed).unwrap();
            let mut pairs: Vec<Edge> = neg.iter().map(|e| (e.holder, e.fund)).collect();
            pairs.sort_unstable();
            assert_eq!(pairs, vec![(0, 1), (1, 0)]);
            assert!(neg.iter().all(|e| e.label == 0));
        }
    }

    #[test]
    fn negatives_are_deterministic() {
        let g = sample();
        assert_eq!(
            sample_negative_edges(&g, 0.5, 42).unwrap(),
            sample_negative_edges(&g, 0.5, 42).unwrap()
        );
    }

    #[test]
    fn negatives_truncate_when_pool_exhausted() {
        // 6 pairs, 4 edges: only 2 non-edges exist.
        let g = sample();
        let neg = sample_negative_edges(&g, 3.0, 1).unwrap();
        assert_eq!(neg.len(), 2);
    }

    fn ten_edge_graph() -> BipartiteGraph {
        let edges: Vec<Edge> = (0..5).flat_map(|h| [(h, h), (h, (h + 1) % 5)]).collect();
        BipartiteGraph::build(5, 5, &edges).unwrap()
    }

    #[test]
    fn split_sizes() {
        let g = ten_edge_graph();
        assert_eq!(g.num_edges(), 10);
        let s = split_edges(&g, 0.2, 9).unwrap();
        assert_eq!((s.test_pos.len(), s.train_pos.len(), s.test_neg.len()), (2, 8, 2));
        assert_eq!(s, split_edges(&g, 0.2, 9).unwrap());
        let mut all: Vec<Edge> = s.train_pos.iter().chain(&s.test_pos).copied().collect();
        all.sort_unstable();
        assert_eq!(all, g.edges());
        assert!(s.test_neg.iter().all(|&(h, f)| !g.has_edge(h, f)));
    }

    #[test]
    fn degenerate_splits() {
        let g = ten_edge_graph();
        assert!(split_edges(&g, 0.0, 1).is_err());
        assert!(split_edges(&g, 1.0, 1).is_err());
        assert!(split_edges(&g, 0.01, 1).is_err());
        let tiny = BipartiteGraph::build(2, 2, &[(0, 0)]).unwrap();
        assert!(split_edges(&tiny, 0.5, 1).is_err());
    }
}
