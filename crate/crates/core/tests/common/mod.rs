#![allow(dead_code)]

use metacs::nn::SparseMatrix;
use metacs::task::{QueryLabels, QueryTarget, Task};
use metacs::Graph;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two 5-cliques {0..5} and {5..10} joined by the edge 4-5, plus a pendant path 9-10-11.
pub fn two_cliques() -> Graph {
    let mut edges = Vec::new();
    for block in [0..5, 5..10] {
        for u in block.clone() {
            for v in block.clone() {
                if u < v {
                    edges.push((u, v));
                }
            }
        }
    }
    edges.extend([(4, 5), (9, 10), (10, 11)]);
    Graph::build(12, edges, None).unwrap()
}

/// Dense random features with entries in [-1, 1), stored sparse.
pub fn random_features(n: usize, dim: usize, seed: u64) -> SparseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dense = Array2::from_shape_fn((n, dim), |_| rng.gen_range(-1.0..1.0));
    SparseMatrix::from_dense(dense.view())
}

fn left() -> Vec<usize> {
    (0..5).collect()
}

fn right() -> Vec<usize> {
    (5..10).collect()
}

/// The two-clique graph with support queries 0 and 6 and query-set queries 2 and 8.
pub fn toy_task(feature_dim: usize, seed: u64) -> Task {
    let support = vec![
        QueryLabels { query: 0, positives: vec![1, 3], negatives: vec![7, 11] },
        QueryLabels { query: 6, positives: vec![5, 9], negatives: vec![1] },
    ];
    let queryset = vec![
        QueryTarget { query: 2, members: left() },
        QueryTarget { query: 8, members: right() },
    ];
    let truth = vec![
        QueryTarget { query: 0, members: left() },
        QueryTarget { query: 6, members: right() },
    ];
    Task::new("toy", two_cliques(), random_features(12, feature_dim, seed), support, queryset)
        .unwrap()
        .with_support_truth(truth)
        .unwrap()
}

/// Fully labelled query-set targets of a task.
pub fn full_targets(task: &Task) -> Vec<QueryLabels> {
    task.queryset.iter().map(|t| t.full_labels(task.node_count())).collect()
}
