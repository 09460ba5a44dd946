//! Immutable undirected simple graphs.

mod decompose;

use std::collections::VecDeque;

pub use decompose::{clustering_coefficients, core_numbers, truss_numbers, StructuralFeatures};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Sparse binary node attributes: for every node the sorted indices of its set bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attributes {
    dim: usize,
    rows: Vec<Vec<u32>>,
}

impl Attributes {
    pub fn new(dim: usize, mut rows: Vec<Vec<u32>>) -> Result<Self> {
        for (v, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&last) = row.last() {
                if last as usize >= dim {
                    return Err(Error::Input(format!(
                        "attribute index {last} of node {v} outside dimension {dim}"
                    )));
                }
            }
        }
        Ok(Self { dim, rows })
    }

    /// Builds attributes from a dense 0/1 matrix given row by row.
    pub fn from_dense(rows: &[Vec<u8>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut sparse = Vec::with_capacity(rows.len());
        for (v, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Input(format!(
                    "attribute row {v} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            let mut set = Vec::new();
            for (i, &b) in row.iter().enumerate() {
                match b {
                    0 => {}
                    1 => set.push(i as u32),
                    _ => {
                        return Err(Error::Input(format!(
                            "attribute ({v}, {i}) is {b}, expected 0 or 1"
                        )))
                    }
                }
            }
            sparse.push(set);
        }
        Ok(Self { dim, rows: sparse })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, v: NodeId) -> &[u32] {
        &self.rows[v]
    }

    pub fn get(&self, v: NodeId, i: usize) -> bool {
        self.rows[v].binary_search(&(i as u32)).is_ok()
    }

    /// Same bits in a wider attribute space (zero padding).
    pub fn widened(&self, dim: usize) -> Self {
        assert!(dim >= self.dim);
        Self {
            dim,
            rows: self.rows.clone(),
        }
    }

    fn select(&self, nodes: &[NodeId]) -> Self {
        Self {
            dim: self.dim,
            rows: nodes.iter().map(|&v| self.rows[v].clone()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    adjacency: Vec<Vec<NodeId>>,
    edge_count: usize,
    attributes: Option<Attributes>,
    node_labels: Option<Vec<u64>>,
}

impl Graph {
    /// Builds a simple graph from raw pairs. Duplicates (in either orientation) and
    /// self-loops are dropped.
    pub fn build(
        node_count: usize,
        edge_pairs: impl IntoIterator<Item = (NodeId, NodeId)>,
        attributes: Option<Attributes>,
    ) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); node_count];
        for (u, v) in edge_pairs {
            if u >= node_count || v >= node_count {
                return Err(Error::Input(format!(
                    "edge ({u}, {v}) references a node outside [0, {node_count})"
                )));
            }
            if u != v {
                adjacency[u].push(v);
                adjacency[v].push(u);
            }
        }
        let mut edge_count = 0;
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
            edge_count += list.len();
        }
        if let Some(attrs) = &attributes {
            if attrs.len() != node_count {
                return Err(Error::Input(format!(
                    "{} attribute rows for {node_count} nodes",
                    attrs.len()
                )));
            }
        }
        Ok(Self {
            adjacency,
            edge_count: edge_count / 2,
            attributes,
            node_labels: None,
        })
    }

    pub fn empty(node_count: usize) -> Self {
        Self::build(node_count, std::iter::empty(), None).expect("empty graph is valid")
    }

    /// Attaches ids from the graph this one was derived from (dataset ids or parent-graph nodes).
    pub fn with_node_labels(mut self, labels: Vec<u64>) -> Result<Self> {
        if labels.len() != self.node_count() {
            return Err(Error::Input(format!(
                "{} node labels for {} nodes",
                labels.len(),
                self.node_count()
            )));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    pub fn with_attributes(mut self, attributes: Option<Attributes>) -> Result<Self> {
        if let Some(attrs) = &attributes {
            if attrs.len() != self.node_count() {
                return Err(Error::Input(format!(
                    "{} attribute rows for {} nodes",
                    attrs.len(),
                    self.node_count()
                )));
            }
        }
        self.attributes = attributes;
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency[v].len()
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(u, list)| {
            list.iter()
                .copied()
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }

    pub fn attributes(&self) -> Option<&Attributes> {
        self.attributes.as_ref()
    }

    pub fn node_labels(&self) -> Option<&[u64]> {
        self.node_labels.as_deref()
    }

    /// Label of `v` in the source graph, or `v` itself when none is attached.
    pub fn label_of(&self, v: NodeId) -> u64 {
        self.node_labels.as_ref().map_or(v as u64, |l| l[v])
    }

    /// Induced subgraph on `nodes` (in the given order). Node labels map back to the
    /// indices of `self`.
    pub fn induced_subgraph(&self, nodes: &[NodeId]) -> Self {
        let mut local = vec![usize::MAX; self.node_count()];
        for (i, &v) in nodes.iter().enumerate() {
            local[v] = i;
        }
        let adjacency: Vec<Vec<NodeId>> = nodes
            .iter()
            .map(|&v| {
                let mut list: Vec<NodeId> = self.adjacency[v]
                    .iter()
                    .filter_map(|&u| (local[u] != usize::MAX).then_some(local[u]))
                    .collect();
                list.sort_unstable();
                list
            })
            .collect();
        let edge_count = adjacency.iter().map(Vec::len).sum::<usize>() / 2;
        Self {
            adjacency,
            edge_count,
            attributes: self.attributes.as_ref().map(|a| a.select(nodes)),
            node_labels: Some(nodes.iter().map(|&v| v as u64).collect()),
        }
    }

    /// Nodes in BFS order from `seed` (FIFO, neighbours in ascending id), at most `limit`.
    pub fn bfs_order(&self, seed: NodeId, limit: usize) -> Vec<NodeId> {
        let mut seen = vec![false; self.node_count()];
        let mut order = Vec::with_capacity(limit.min(self.node_count()));
        let mut queue = VecDeque::new();
        seen[seed] = true;
        queue.push_back(seed);
        while let Some(v) = queue.pop_front() {
            if order.len() == limit {
                break;
            }
            order.push(v);
            for &u in &self.adjacency[v] {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        order
    }

    /// Connected component of `seed` restricted to nodes where `keep` is true.
    pub fn component_within(&self, seed: NodeId, keep: impl Fn(NodeId) -> bool) -> Vec<NodeId> {
        let mut seen = vec![false; self.node_count()];
        let mut out = vec![seed];
        seen[seed] = true;
        let mut i = 0;
        while i < out.len() {
            let v = out[i];
            i += 1;
            for &u in &self.adjacency[v] {
                if !seen[u] && keep(u) {
                    seen[u] = true;
                    out.push(u);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Same graph with nodes renamed by `perm` (node `v` becomes `perm[v]`).
    pub fn permuted(&self, perm: &[NodeId]) -> Self {
        let n = self.node_count();
        let edges: Vec<_> = self.edges().map(|(u, v)| (perm[u], perm[v])).collect();
        let attributes = self.attributes.as_ref().map(|a| {
            let mut rows = vec![Vec::new(); n];
            for v in 0..n {
                rows[perm[v]] = a.rows[v].clone();
            }
            Attributes { dim: a.dim, rows }
        });
        Graph::build(n, edges, attributes).expect("permutation preserves validity")
    }
}

/// Induced subgraph on the first `min(target_size, reachable)` nodes visited by BFS from
/// `seed`. Node 0 of the result is the seed; node labels map back to `g`.
pub fn bfs_subgraph(g: &Graph, seed: NodeId, target_size: usize) -> Graph {
    let order = g.bfs_order(seed, target_size.max(1));
    g.induced_subgraph(&order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Graph {
        Graph::build(3, [(0, 1), (1, 2), (0, 2)], None).unwrap()
    }

    #[test]
    fn triangle_counts() {
        let g = triangle();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 3);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn duplicates_and_loops_collapse() {
        let g = Graph::build(3, [(0, 1), (1, 0), (2, 2), (0, 1)], None).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert!(g.neighbors(2).is_empty());
        assert!(g.has_edge(1, 0));
    }

    #[test]
    fn out_of_range_and_attribute_mismatch_are_errors() {
        assert!(matches!(
            Graph::build(2, [(0, 2)], None),
            Err(Error::Input(_))
        ));
        let attrs = Attributes::new(2, vec![vec![0]]).unwrap();
        assert!(matches!(
            Graph::build(2, [(0, 1)], Some(attrs)),
            Err(Error::Input(_))
        ));
        assert!(Attributes::from_dense(&[vec![0, 2]]).is_err());
    }

    #[test]
    fn bfs_triangle_prefix() {
        let sub = bfs_subgraph(&triangle(), 0, 2);
        assert_eq!(sub.node_count(), 2);
        assert_eq!(sub.edge_count(), 1);
        assert_eq!(sub.node_labels(), Some(&[0, 1][..]));
    }

    #[test]
    fn bfs_isolated_seed() {
        let g = Graph::build(4, [(1, 2)], None).unwrap();
        let sub = bfs_subgraph(&g, 0, 200);
        assert_eq!(sub.node_count(), 1);
        assert_eq!(sub.edge_count(), 0);
    }

    #[test]
    fn bfs_visits_neighbours_in_ascending_order() {
        // 0 - {3, 1}, 1 - 2, 3 - 4
        let g = Graph::build(5, [(0, 3), (0, 1), (1, 2), (3, 4)], None).unwrap();
        assert_eq!(g.bfs_order(0, 10), vec![0, 1, 3, 2, 4]);
    }

    #[test]
    fn empty_graph() {
        let g = Graph::empty(0);
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.edges().count(), 0);
    }
}
