use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::{Graph, NodeId};

/// Per-node structural descriptors used as node features.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuralFeatures {
    pub core_number: Vec<usize>,
    pub local_clustering: Vec<f64>,
}

impl StructuralFeatures {
    pub fn of(g: &Graph) -> Self {
        Self {
            core_number: core_numbers(g),
            local_clustering: clustering_coefficients(g),
        }
    }
}

/// Core number of every node, by minimum-degree peeling with bucket queues (O(n + m)).
pub fn core_numbers(g: &Graph) -> Vec<usize> {
    let n = g.node_count();
    if n == 0 {
        return Vec::new();
    }
    let mut degree: Vec<usize> = (0..n).map(|v| g.degree(v)).collect();
    let max_degree = degree.iter().copied().max().unwrap_or(0);

    // bin[d] = start of degree-d block in `order`
    let mut bin = vec![0usize; max_degree + 2];
    for &d in &degree {
        bin[d + 1] += 1;
    }
    for d in 1..bin.len() {
        bin[d] += bin[d - 1];
    }
    let mut pos = vec![0usize; n];
    let mut order = vec![0usize; n];
    {
        let mut next = bin.clone();
        for v in 0..n {
            pos[v] = next[degree[v]];
            order[pos[v]] = v;
            next[degree[v]] += 1;
        }
    }

    for i in 0..n {
        let v = order[i];
        for &u in g.neighbors(v) {
            if degree[u] > degree[v] {
                // move u to the front of its block, then shrink the block
                let du = degree[u];
                let pu = pos[u];
                let pw = bin[du];
                let w = order[pw];
                if u != w {
                    order.swap(pu, pw);
                    pos[u] = pw;
                    pos[w] = pu;
                }
                bin[du] += 1;
                degree[u] -= 1;
            }
        }
    }
    degree
}

/// Local clustering coefficient `2 T(v) / (deg(v) (deg(v) - 1))`; zero below degree 2.
pub fn clustering_coefficients(g: &Graph) -> Vec<f64> {
    (0..g.node_count())
        .map(|v| {
            let d = g.degree(v);
            if d < 2 {
                return 0.0;
            }
            let links: usize = g
                .neighbors(v)
                .iter()
                .map(|&u| intersection_count(g.neighbors(u), g.neighbors(v)))
                .sum();
            // every neighbour-neighbour edge was counted from both ends
            links as f64 / (d * (d - 1)) as f64
        })
        .collect()
}

fn intersection_count(a: &[NodeId], b: &[NodeId]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Trussness of every edge, indexed in the order of [`Graph::edges`].
///
/// Support counting followed by minimum-support peeling; an edge removed while the
/// running level is `k` has trussness `k`.
pub fn truss_numbers(g: &Graph) -> Vec<usize> {
    let index = EdgeIndex::new(g);
    let m = index.edges.len();
    let mut support: Vec<usize> = index
        .edges
        .iter()
        .map(|&(u, v)| intersection_count(g.neighbors(u), g.neighbors(v)))
        .collect();
    let mut alive = vec![true; m];
    let mut truss = vec![0usize; m];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        support.iter().enumerate().map(|(e, &s)| Reverse((s, e))).collect();
    let mut level = 2;

    while let Some(Reverse((s, e))) = heap.pop() {
        if !alive[e] || s != support[e] {
            continue;
        }
        level = level.max(s + 2);
        truss[e] = level;
        alive[e] = false;
        let (u, v) = index.edges[e];
        let (nu, nv) = (g.neighbors(u), g.neighbors(v));
        let (mut i, mut j) = (0, 0);
        while i < nu.len() && j < nv.len() {
            match nu[i].cmp(&nv[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    let uw = index.at(u, i);
                    let vw = index.at(v, j);
                    if alive[uw] && alive[vw] {
                        for f in [uw, vw] {
                            support[f] -= 1;
                            heap.push(Reverse((support[f], f)));
                        }
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
    }
    truss
}

/// Maps an undirected edge to its position in [`Graph::edges`].
pub(crate) struct EdgeIndex {
    pub edges: Vec<(NodeId, NodeId)>,
    // ids[v][p] = id of the edge between v and neighbors(v)[p]
    ids: Vec<Vec<usize>>,
}

impl EdgeIndex {
    pub fn new(g: &Graph) -> Self {
        let edges: Vec<_> = g.edges().collect();
        let mut ids: Vec<Vec<usize>> = (0..g.node_count())
            .map(|v| vec![usize::MAX; g.degree(v)])
            .collect();
        for (e, &(u, v)) in edges.iter().enumerate() {
            let pu = g.neighbors(u).binary_search(&v).expect("symmetric adjacency");
            let pv = g.neighbors(v).binary_search(&u).expect("symmetric adjacency");
            ids[u][pu] = e;
            ids[v][pv] = e;
        }
        Self { edges, ids }
    }

    /// Id of the edge at position `p` of `neighbors(v)`.
    pub fn at(&self, v: NodeId, p: usize) -> usize {
        self.ids[v][p]
    }
}
