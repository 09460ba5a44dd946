use std::collections::{BTreeSet, VecDeque};

use metacs::algo::{ctc_or_fallback, ctc_search, kcore_community, AlgoScorer, AlgoMethod};
use metacs::dataset::gnp;
use metacs::eval::Scorer;
use metacs::graph::core_numbers;
use metacs::task::{QueryTarget, Task};
use metacs::{Error, Graph, NodeId};
use proptest::prelude::*;

type Edge = (NodeId, NodeId);

/// Brute-force k-truss: repeatedly delete edges lying in fewer than k-2 triangles.
fn k_truss(edges: &[Edge], k: usize) -> BTreeSet<Edge> {
    let mut alive: BTreeSet<Edge> = edges.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
    loop {
        let nodes: BTreeSet<NodeId> = alive.iter().flat_map(|&(u, v)| [u, v]).collect();
        let has = |a: NodeId, b: NodeId, alive: &BTreeSet<Edge>| alive.contains(&(a.min(b), a.max(b)));
        let weak: Vec<Edge> = alive
            .iter()
            .copied()
            .filter(|&(u, v)| nodes.iter().filter(|&&w| has(u, w, &alive) && has(v, w, &alive)).count() + 2 < k)
            .collect();
        if weak.is_empty() {
            return alive;
        }
        for e in weak {
            alive.remove(&e);
        }
    }
}

/// Nodes reachable from `seed` over `edges`.
fn reach(edges: &BTreeSet<Edge>, seed: NodeId) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::from([seed]);
    let mut queue = VecDeque::from([seed]);
    while let Some(u) = queue.pop_front() {
        for &(a, b) in edges {
            let other = if a == u { b } else if b == u { a } else { continue };
            if seen.insert(other) {
                queue.push_back(other);
            }
        }
    }
    seen
}

/// Query nodes all lie in one connected component of the k-truss edge set.
fn truss_holds(edges: &BTreeSet<Edge>, query: &[NodeId]) -> bool {
    let touched: BTreeSet<NodeId> = edges.iter().flat_map(|&(u, v)| [u, v]).collect();
    if !query.iter().all(|q| touched.contains(q)) {
        return false;
    }
    let comp = reach(edges, query[0]);
    query.iter().all(|q| comp.contains(q))
}

/// Checks a CTC answer level by level: `k` is the largest level whose truss connects the
/// queries, and the returned nodes induce a connected k-truss holding them.
fn verify_ctc(g: &Graph, query: &[NodeId]) -> Result<(), TestCaseError> {
    let edges: Vec<Edge> = g.edges().collect();
    let best = (2..=g.node_count().max(2)).rev().find(|&k| truss_holds(&k_truss(&edges, k), query));
    match (best, ctc_search(g, query)) {
        (None, Err(Error::NoCommunity(_))) => Ok(()),
        (None, Ok(r)) => Err(TestCaseError::fail(format!("found {r:?} where no truss holds {query:?}"))),
        (Some(k), Err(e)) => Err(TestCaseError::fail(format!("level {k} holds {query:?} but search failed: {e}"))),
        (Some(k), Ok(r)) => {
            prop_assert_eq!(r.k, k);
            prop_assert!(!truss_holds(&k_truss(&edges, k + 1), query));
            let nodes: BTreeSet<NodeId> = r.nodes.iter().copied().collect();
            prop_assert!(query.iter().all(|q| nodes.contains(q)));
            let inside: Vec<Edge> = edges.iter().copied().filter(|(u, v)| nodes.contains(u) && nodes.contains(v)).collect();
            let local = k_truss(&inside, k);
            prop_assert!(truss_holds(&local, query));
            prop_assert_eq!(reach(&local, query[0]), nodes.clone());
            // The answer lives inside the connected level-k truss of the whole graph.
            let level = reach(&k_truss(&edges, k), query[0]);
            prop_assert!(nodes.is_subset(&level));
            Ok(())
        }
        (_, Err(e)) => Err(TestCaseError::fail(format!("unexpected error {e}"))),
    }
}

fn small_graph() -> impl Strategy<Value = Graph> {
    (2usize..=30, any::<u64>()).prop_map(|(n, seed)| gnp(n, 0.3, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn ctc_single_query(g in small_graph(), pick in any::<prop::sample::Index>()) {
        let q = pick.index(g.node_count());
        verify_ctc(&g, &[q])?;
    }

    #[test]
    fn ctc_query_pairs(g in small_graph(), a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        let n = g.node_count();
        let (a, b) = (a.index(n), b.index(n));
        verify_ctc(&g, &[a, b])?;
    }

    #[test]
    fn fallback_always_answers(g in small_graph(), pick in any::<prop::sample::Index>()) {
        let q = pick.index(g.node_count());
        let r = ctc_or_fallback(&g, &[q]).unwrap();
        prop_assert!(r.nodes.contains(&q));
        match ctc_search(&g, &[q]) {
            Ok(found) => prop_assert_eq!(r, found),
            Err(_) => {
                prop_assert_eq!(r.nodes.clone(), g.component_within(q, |_| true));
                prop_assert_eq!(r.k, if r.nodes.len() > 1 { 2 } else { 0 });
            }
        }
    }

    #[test]
    fn kcore_is_the_maximal_connected_core(g in small_graph(), pick in any::<prop::sample::Index>()) {
        let q = pick.index(g.node_count());
        let r = kcore_community(&g, q).unwrap();
        let core = core_numbers(&g);
        prop_assert_eq!(r.k, core[q]);
        // Brute force: grow from q through nodes of coreness at least core(q).
        let mut seen = BTreeSet::from([q]);
        let mut queue = VecDeque::from([q]);
        while let Some(u) = queue.pop_front() {
            for &w in g.neighbors(u) {
                if core[w] >= core[q] && seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        prop_assert_eq!(r.nodes.clone(), seen.into_iter().collect::<Vec<_>>());
        // Every member keeps at least k neighbours inside the community.
        let members: BTreeSet<NodeId> = r.nodes.iter().copied().collect();
        for &v in &r.nodes {
            let inside = g.neighbors(v).iter().filter(|w| members.contains(w)).count();
            prop_assert!(inside >= r.k);
        }
    }
}

#[test]
fn errors() {
    let g = gnp(5, 0.5, 1);
    assert!(matches!(ctc_search(&g, &[]), Err(Error::Input(_))));
    assert!(matches!(ctc_search(&g, &[9]), Err(Error::Input(_))));
    assert!(kcore_community(&g, 7).is_err());
}

#[test]
fn scorer_marks_found_members() {
    // A 4-clique {0,1,2,3} with a tail 3-4-5.
    let edges = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3), (3, 4), (4, 5)];
    let g = Graph::build(6, edges, None).unwrap();
    let features = metacs::nn::SparseMatrix::from_dense(ndarray::Array2::<f64>::eye(6).view());
    let queryset = vec![QueryTarget { query: 1, members: vec![0, 1, 2, 3] }];
    let task = Task::new("t", g, features, vec![], queryset).unwrap();
    let p = AlgoScorer(AlgoMethod::Ctc).predict_task(&task).unwrap();
    assert_eq!(p, vec![vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0]]);
    let p = AlgoScorer(AlgoMethod::Kcore).predict_task(&task).unwrap();
    assert_eq!(p, vec![vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0]]);
}
