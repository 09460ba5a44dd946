//! Non-learning community search: closest truss community and k-core containment.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::graph::{core_numbers, truss_numbers, Graph, NodeId};
use crate::task::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgoMethod {
    Ctc,
    Kcore,
}

impl std::str::FromStr for AlgoMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ctc" => Ok(AlgoMethod::Ctc),
            "kcore" | "k-core" => Ok(AlgoMethod::Kcore),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

impl std::fmt::Display for AlgoMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AlgoMethod::Ctc => "ctc",
            AlgoMethod::Kcore => "kcore",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunityResult {
    /// Sorted node ids.
    pub nodes: Vec<NodeId>,
    /// Trussness (CTC) or coreness (k-core) of the result.
    pub k: usize,
    pub method: AlgoMethod,
}

/// Undirected edge set with per-edge triangle support, restricted to a node subset.
#[derive(Clone, Debug)]
struct TrussState {
    adj: BTreeMap<NodeId, BTreeSet<NodeId>>,
    support: BTreeMap<(NodeId, NodeId), usize>,
    k: usize,
}

fn key(u: NodeId, v: NodeId) -> (NodeId, NodeId) {
    (u.min(v), u.max(v))
}

impl TrussState {
    fn new(edges: &[(NodeId, NodeId)], k: usize) -> Self {
        let mut adj: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        for &(u, v) in edges {
            adj.entry(u).or_default().insert(v);
            adj.entry(v).or_default().insert(u);
        }
        let support = edges
            .iter()
            .map(|&(u, v)| (key(u, v), adj[&u].intersection(&adj[&v]).count()))
            .collect();
        Self { adj, support, k }
    }

    fn nodes(&self) -> Vec<NodeId> {
        self.adj.keys().copied().collect()
    }

    fn contains(&self, v: NodeId) -> bool {
        self.adj.contains_key(&v)
    }

    /// Deletes `v`, then peels edges whose support falls below `k − 2` and drops nodes left
    /// without edges.
    fn remove_node(&mut self, v: NodeId) {
        let mut queue: VecDeque<(NodeId, NodeId)> = self
            .adj
            .get(&v)
            .map(|ns| ns.iter().map(|&u| key(u, v)).collect())
            .unwrap_or_default();
        let need = self.k.saturating_sub(2);
        while let Some((a, b)) = queue.pop_front() {
            if self.support.remove(&(a, b)).is_none() {
                continue;
            }
            let common: Vec<NodeId> = self.adj[&a].intersection(&self.adj[&b]).copied().collect();
            for w in common {
                for e in [key(a, w), key(b, w)] {
                    if let Some(s) = self.support.get_mut(&e) {
                        *s -= 1;
                        if *s < need {
                            queue.push_back(e);
                        }
                    }
                }
            }
            for (x, y) in [(a, b), (b, a)] {
                let ns = self.adj.get_mut(&x).expect("endpoint present");
                ns.remove(&y);
                if ns.is_empty() {
                    self.adj.remove(&x);
                }
            }
        }
        self.adj.remove(&v);
    }

    /// Nodes reachable from `seed`.
    fn component(&self, seed: NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::from([seed]);
        let mut queue = VecDeque::from([seed]);
        while let Some(u) = queue.pop_front() {
            for &w in &self.adj[&u] {
                if seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        seen
    }

    fn restrict(&mut self, keep: &BTreeSet<NodeId>) {
        self.adj.retain(|v, _| keep.contains(v));
        self.support.retain(|(u, _), _| keep.contains(u));
    }

    /// `max_{q ∈ Q} dist(v, q)` for every node, by BFS inside the state.
    fn query_distance(&self, query: &[NodeId]) -> BTreeMap<NodeId, usize> {
        let mut worst: BTreeMap<NodeId, usize> = self.adj.keys().map(|&v| (v, 0)).collect();
        for &q in query {
            let mut dist = BTreeMap::from([(q, 0usize)]);
            let mut queue = VecDeque::from([q]);
            while let Some(u) = queue.pop_front() {
                let d = dist[&u];
                for &w in &self.adj[&u] {
                    dist.entry(w).or_insert_with(|| {
                        queue.push_back(w);
                        d + 1
                    });
                }
            }
            for (v, w) in worst.iter_mut() {
                *w = (*w).max(dist.get(v).copied().unwrap_or(usize::MAX));
            }
        }
        worst
    }

    /// Query nodes present and mutually connected.
    fn holds(&self, query: &[NodeId]) -> bool {
        if !query.iter().all(|&q| self.contains(q)) {
            return false;
        }
        let comp = self.component(query[0]);
        query.iter().all(|q| comp.contains(q))
    }
}

fn check_query(g: &Graph, query: &[NodeId]) -> Result<()> {
    if query.is_empty() {
        return Err(Error::Input("empty query set".into()));
    }
    if let Some(q) = query.iter().find(|&&q| q >= g.node_count()) {
        return Err(Error::Input(format!("query {q} outside a graph of {} nodes", g.node_count())));
    }
    Ok(())
}

/// The connected k-truss with the largest `k` containing every query node, shrunk by greedily
/// removing the node farthest from the queries (ties to the largest id) while the queries stay
/// together in a connected k-truss.
pub fn ctc_search(g: &Graph, query: &[NodeId]) -> Result<CommunityResult> {
    check_query(g, query)?;
    let mut query: Vec<NodeId> = query.to_vec();
    query.sort_unstable();
    query.dedup();
    let truss = truss_numbers(g);
    let edges: Vec<(NodeId, NodeId)> = g.edges().collect();
    let top = truss.iter().copied().max().unwrap_or(0);
    let mut found = None;
    for k in (2..=top).rev() {
        let level: Vec<(NodeId, NodeId)> = edges
            .iter()
            .zip(&truss)
            .filter(|&(_, &t)| t >= k)
            .map(|(&e, _)| e)
            .collect();
        let mut state = TrussState::new(&level, k);
        if state.holds(&query) {
            let comp = state.component(query[0]);
            state.restrict(&comp);
            found = Some(state);
            break;
        }
    }
    let mut state = found.ok_or_else(|| {
        Error::NoCommunity(format!("no connected k-truss (k ≥ 2) contains the queries {query:?}"))
    })?;

    loop {
        let dist = state.query_distance(&query);
        let far = dist
            .iter()
            .filter(|(v, _)| query.binary_search(v).is_err())
            .max_by_key(|&(&v, &d)| (d, v));
        let Some((&v, &d)) = far else { break };
        if d == 0 {
            break;
        }
        let mut next = state.clone();
        next.remove_node(v);
        if !next.holds(&query) {
            break;
        }
        let comp = next.component(query[0]);
        next.restrict(&comp);
        state = next;
    }
    Ok(CommunityResult {
        nodes: state.nodes(),
        k: state.k,
        method: AlgoMethod::Ctc,
    })
}

/// [`ctc_search`], falling back to the connected component of the first query node (`k = 2`,
/// or `{q}` with `k = 0` when it is isolated) when no truss holds the queries together.
pub fn ctc_or_fallback(g: &Graph, query: &[NodeId]) -> Result<CommunityResult> {
    match ctc_search(g, query) {
        Err(Error::NoCommunity(_)) => {
            let q = query[0];
            let nodes = g.component_within(q, |_| true);
            let k = if nodes.len() > 1 { 2 } else { 0 };
            Ok(CommunityResult {
                nodes,
                k,
                method: AlgoMethod::Ctc,
            })
        }
        other => other,
    }
}

/// Connected component of `q` among the nodes whose core number is at least that of `q`.
pub fn kcore_community(g: &Graph, q: NodeId) -> Result<CommunityResult> {
    check_query(g, &[q])?;
    let core = core_numbers(g);
    let k = core[q];
    Ok(CommunityResult {
        nodes: g.component_within(q, |v| core[v] >= k),
        k,
        method: AlgoMethod::Kcore,
    })
}

/// Algorithmic search as a [`Scorer`]: probability 1 inside the found community, 0 elsewhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AlgoScorer(pub AlgoMethod);

impl Scorer for AlgoScorer {
    fn predict_task(&self, task: &Task) -> Result<Vec<Vec<f64>>> {
        let n = task.node_count();
        task.queryset
            .iter()
            .map(|t| {
                let found = match self.0 {
                    AlgoMethod::Ctc => ctc_or_fallback(&task.graph, &[t.query])?,
                    AlgoMethod::Kcore => kcore_community(&task.graph, t.query)?,
                };
                let mut p = vec![0.0; n];
                for v in found.nodes {
                    p[v] = 1.0;
                }
                Ok(p)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: usize) -> Graph {
        let edges: Vec<_> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        Graph::build(n, edges, None).unwrap()
    }

    #[test]
    fn k4_is_a_four_truss() {
        let r = ctc_search(&complete(4), &[0]).unwrap();
        assert_eq!(r.nodes, vec![0, 1, 2, 3]);
        assert_eq!(r.k, 4);
    }

    #[test]
    fn bridged_triangles() {
        let g = Graph::build(6, [(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5), (3, 5)], None).unwrap();
        let r = ctc_search(&g, &[0]).unwrap();
        assert_eq!(r.nodes, vec![0, 1, 2]);
        assert_eq!(r.k, 3);
        // Queries in both triangles only meet in the 2-truss.
        assert_eq!(ctc_search(&g, &[0, 5]).unwrap().k, 2);
    }

    #[test]
    fn isolated_query_falls_back() {
        let g = Graph::build(3, [(1, 2)], None).unwrap();
        assert!(matches!(ctc_search(&g, &[0]), Err(Error::NoCommunity(_))));
        let r = ctc_or_fallback(&g, &[0]).unwrap();
        assert_eq!((r.nodes, r.k), (vec![0], 0));
        assert!(ctc_search(&g, &[]).is_err());
        assert!(ctc_search(&g, &[7]).is_err());
    }

    #[test]
    fn kcore_examples() {
        let tri = complete(3);
        let r = kcore_community(&tri, 0).unwrap();
        assert_eq!((r.nodes, r.k), (vec![0, 1, 2], 2));
        let star = Graph::build(4, [(0, 1), (0, 2), (0, 3)], None).unwrap();
        let r = kcore_community(&star, 0).unwrap();
        assert_eq!((r.nodes, r.k), (vec![0, 1, 2, 3], 1));
        let r = kcore_community(&Graph::empty(2), 1).unwrap();
        assert_eq!((r.nodes, r.k), (vec![1], 0));
    }
}
