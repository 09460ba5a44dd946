//! Few-shot community search.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: immutable graphs and structural algorithms (cores, trusses, BFS sampling).
//! - [`dataset`]: edge-list / community / ego-network loaders and a planted-partition generator.
//! - [`task`]: episodic community-search tasks and the four task scenarios.
//! - [`nn`]: a small reverse-mode autodiff substrate with GCN/GAT/SAGE layers, MLPs, losses and Adam.
//! - [`cgnp`]: the conditional graph neural process (encoder, commutative combine, decoders).
//! - [`baselines`]: Supervised GNN, feature transfer, MAML, Reptile and graph prototypical networks.
//! - [`algo`]: non-learning community search (closest truss community, k-core).
//! - [`eval`]: metrics, experiment configuration and orchestration, sweeps and persistence.

pub mod algo;
pub mod baselines;
pub mod cgnp;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod nn;
pub mod task;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
