use metacs::dataset::gnp;
use metacs::graph::{bfs_subgraph, clustering_coefficients, core_numbers, truss_numbers};
use metacs::Graph;
use proptest::prelude::*;

/// Largest k such that v survives repeated deletion of nodes with degree < k.
fn brute_core(g: &Graph) -> Vec<usize> {
    let n = g.node_count();
    let mut core = vec![0; n];
    for k in 1..=n {
        let mut alive = vec![true; n];
        loop {
            let mut changed = false;
            for v in 0..n {
                if alive[v] && g.neighbors(v).iter().filter(|&&u| alive[u]).count() < k {
                    alive[v] = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        for v in 0..n {
            if alive[v] {
                core[v] = k;
            }
        }
    }
    core
}

/// Largest k such that the edge survives repeated deletion of edges in fewer than k-2 triangles.
fn brute_truss(g: &Graph) -> Vec<usize> {
    let n = g.node_count();
    let edges: Vec<_> = g.edges().collect();
    let mut truss = vec![2; edges.len()];
    for k in 3.. {
        let mut alive = vec![vec![false; n]; n];
        for &(u, v) in &edges {
            alive[u][v] = true;
            alive[v][u] = true;
        }
        loop {
            let dead: Vec<_> = edges
                .iter()
                .copied()
                .filter(|&(u, v)| {
                    alive[u][v] && (0..n).filter(|&w| alive[u][w] && alive[v][w]).count() + 2 < k
                })
                .collect();
            if dead.is_empty() {
                break;
            }
            for (u, v) in dead {
                alive[u][v] = false;
                alive[v][u] = false;
            }
        }
        let mut any = false;
        for (i, &(u, v)) in edges.iter().enumerate() {
            if alive[u][v] {
                truss[i] = k;
                any = true;
            }
        }
        if !any {
            break;
        }
    }
    truss
}

fn triangles_at(g: &Graph, v: usize) -> usize {
    let nb = g.neighbors(v);
    let mut t = 0;
    for (i, &a) in nb.iter().enumerate() {
        for &b in &nb[i + 1..] {
            if g.has_edge(a, b) {
                t += 1;
            }
        }
    }
    t
}

fn complete(n: usize) -> Graph {
    let pairs = (0..n).flat_map(|u| ((u + 1)..n).map(move |v| (u, v)));
    Graph::build(n, pairs, None).unwrap()
}

#[test]
fn complete_graph_decompositions() {
    let g = complete(5);
    assert!(core_numbers(&g).iter().all(|&c| c == 4));
    assert!(truss_numbers(&g).iter().all(|&t| t == 5));
    assert!(clustering_coefficients(&g).iter().all(|&c| c == 1.0));
}

#[test]
fn path_and_star() {
    let path = Graph::build(4, [(0, 1), (1, 2), (2, 3)], None).unwrap();
    assert_eq!(core_numbers(&path), vec![1, 1, 1, 1]);
    assert_eq!(truss_numbers(&path), vec![2, 2, 2]);
    let star = Graph::build(4, [(0, 1), (0, 2), (0, 3)], None).unwrap();
    assert_eq!(clustering_coefficients(&star), vec![0.0; 4]);
}

#[test]
fn two_triangles_sharing_an_edge() {
    // 0-1-2 and 1-2-3 share edge (1, 2); plus pendant 3-4
    let g = Graph::build(5, [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3), (3, 4)], None).unwrap();
    assert_eq!(core_numbers(&g), vec![2, 2, 2, 2, 1]);
    let truss = truss_numbers(&g);
    let edges: Vec<_> = g.edges().collect();
    for (e, t) in edges.iter().zip(&truss) {
        let expected = if *e == (3, 4) { 2 } else { 3 };
        assert_eq!(*t, expected, "edge {e:?}");
    }
    let cc = clustering_coefficients(&g);
    assert!((cc[1] - 2.0 / 3.0).abs() < 1e-12);
    assert!((cc[3] - 1.0 / 3.0).abs() < 1e-12);
}

fn graph_strategy() -> impl Strategy<Value = Graph> {
    (1usize..=50, 0.0f64..0.5, any::<u64>()).prop_map(|(n, p, seed)| gnp(n, p, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn core_numbers_match_brute_force(g in graph_strategy()) {
        prop_assert_eq!(core_numbers(&g), brute_core(&g));
    }

    #[test]
    fn truss_numbers_match_brute_force(g in graph_strategy()) {
        prop_assert_eq!(truss_numbers(&g), brute_truss(&g));
    }

    #[test]
    fn clustering_matches_triangle_count(g in graph_strategy()) {
        let cc = clustering_coefficients(&g);
        for v in 0..g.node_count() {
            let d = g.degree(v);
            let expected = if d < 2 { 0.0 } else { 2.0 * triangles_at(&g, v) as f64 / (d * (d - 1)) as f64 };
            prop_assert!((cc[v] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn decompositions_are_permutation_invariant(g in graph_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut perm: Vec<usize> = (0..g.node_count()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let h = g.permuted(&perm);
        let (cg, ch) = (core_numbers(&g), core_numbers(&h));
        for v in 0..g.node_count() {
            prop_assert_eq!(cg[v], ch[perm[v]]);
        }
        let (lg, lh) = (clustering_coefficients(&g), clustering_coefficients(&h));
        for v in 0..g.node_count() {
            prop_assert!((0.0..=1.0).contains(&lg[v]));
            prop_assert!((lg[v] - lh[perm[v]]).abs() < 1e-12);
        }
    }

    #[test]
    fn bfs_subgraph_is_connected_induced_prefix(g in graph_strategy(), size in 1usize..60) {
        let sub = bfs_subgraph(&g, 0, size);
        let labels = sub.node_labels().unwrap();
        prop_assert_eq!(labels[0], 0);
        prop_assert!(sub.node_count() <= size);
        let reach = g.component_within(0, |_| true).len();
        prop_assert_eq!(sub.node_count(), size.min(reach));
        // induced: every parent edge between kept nodes is present
        for i in 0..sub.node_count() {
            for j in 0..sub.node_count() {
                let (a, b) = (labels[i] as usize, labels[j] as usize);
                prop_assert_eq!(sub.has_edge(i, j), i != j && g.has_edge(a, b));
            }
        }
        prop_assert_eq!(sub.component_within(0, |_| true).len(), sub.node_count());
    }
}
