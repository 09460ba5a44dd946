//! Neural substrate: sparse matrices, reverse-mode autodiff, GNN layers, MLPs, losses,
//! optimizers, gradient checking and checkpoints.

mod checkpoint;
mod gradcheck;
mod loss;
mod optim;
mod params;
mod sparse;
mod tape;

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint, Checkpoint};
pub(crate) use checkpoint::hex;
pub use gradcheck::{gradient_check, GradientCheck, FD_STEP};
pub use loss::{bce_query_loss, PROB_EPS};
pub use optim::{sgd_step, Adam};
pub use params::{Gradients, ParamId, ParameterSet};
pub use sparse::SparseMatrix;
pub use tape::{bind, sigmoid, Bound, Tape, Var};

use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Gcn,
    Gat,
    Sage,
}

impl std::str::FromStr for LayerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(LayerKind::Gcn),
            "gat" => Ok(LayerKind::Gat),
            "sage" | "graphsage" => Ok(LayerKind::Sage),
            other => Err(Error::Config(format!("unknown layer kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LayerKind::Gcn => "gcn",
            LayerKind::Gat => "gat",
            LayerKind::Sage => "sage",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub dropout: f64,
    pub activation: Activation,
}

impl LayerSpec {
    /// `layers` stacked layers `in_dim → hidden → … → out_dim`; ReLU and dropout on every
    /// layer but the last.
    pub fn stack(
        kind: LayerKind,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        layers: usize,
        dropout: f64,
    ) -> Vec<LayerSpec> {
        (0..layers)
            .map(|l| {
                let last = l + 1 == layers;
                LayerSpec {
                    kind,
                    in_dim: if l == 0 { in_dim } else { hidden },
                    out_dim: if last { out_dim } else { hidden },
                    dropout: if last { 0.0 } else { dropout },
                    activation: if last {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect()
    }
}

/// Propagation matrices of one graph, shared by every layer kind.
#[derive(Clone, Debug)]
pub struct GraphOps {
    /// `D^{-1/2} (A + I) D^{-1/2}`.
    pub gcn: Arc<SparseMatrix>,
    /// Row-normalised adjacency without self-loops (zero rows for isolated nodes).
    pub mean: Arc<SparseMatrix>,
    /// Sparsity pattern of `A + I`.
    pub attention: Arc<SparseMatrix>,
}

impl GraphOps {
    pub fn new(g: &Graph) -> Self {
        let n = g.node_count();
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|v| 1.0 / ((g.degree(v) + 1) as f64).sqrt())
            .collect();
        let closed = |v: usize| {
            let mut row: Vec<usize> = g.neighbors(v).to_vec();
            let at = row.partition_point(|&u| u < v);
            row.insert(at, v);
            row
        };
        let gcn: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|v| {
                closed(v)
                    .into_iter()
                    .map(|u| (u, inv_sqrt[v] * inv_sqrt[u]))
                    .collect()
            })
            .collect();
        let mean: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|v| {
                let d = g.degree(v) as f64;
                g.neighbors(v).iter().map(|&u| (u, 1.0 / d)).collect()
            })
            .collect();
        let attention: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|v| closed(v).into_iter().map(|u| (u, 1.0)).collect())
            .collect();
        let build = |rows: &[Vec<(usize, f64)>]| {
            Arc::new(SparseMatrix::from_rows(n, rows).expect("adjacency rows are valid"))
        };
        Self {
            gcn: build(&gcn),
            mean: build(&mean),
            attention: build(&attention),
        }
    }

    pub fn node_count(&self) -> usize {
        self.gcn.rows()
    }
}

/// Input of the first layer: a tape value or a constant sparse matrix.
#[derive(Clone, Debug)]
pub enum NodeInput {
    Dense(Var),
    Sparse(Arc<SparseMatrix>),
}

impl NodeInput {
    fn width(&self, tape: &Tape) -> usize {
        match self {
            NodeInput::Dense(v) => tape.value(*v).ncols(),
            NodeInput::Sparse(s) => s.cols(),
        }
    }

    fn rows(&self, tape: &Tape) -> usize {
        match self {
            NodeInput::Dense(v) => tape.value(*v).nrows(),
            NodeInput::Sparse(s) => s.rows(),
        }
    }

    fn times(&self, tape: &mut Tape, w: Var) -> Var {
        match self {
            NodeInput::Dense(x) => tape.matmul(*x, w),
            NodeInput::Sparse(s) => tape.sparse_matmul(s, w),
        }
    }
}

#[derive(Clone, Debug)]
struct GnnLayer {
    spec: LayerSpec,
    weight: ParamId,
    weight_neigh: Option<ParamId>,
    att: Option<(ParamId, ParamId)>,
    bias: ParamId,
}

/// Weight rows that multiply the 0/1 marker column of a marked stack.
#[derive(Clone, Copy, Debug)]
struct MarkerRows {
    weight: ParamId,
    weight_neigh: Option<ParamId>,
}

/// A stack of message-passing layers whose weights live in a [`ParameterSet`].
///
/// A *marked* stack expects its input as `[m ‖ X]` where `m` is a per-node 0/1 marker and `X`
/// is shared between many forward passes. The first layer keeps the marker row of its weight
/// as a separate tensor so that `X W` is computed once per tape in
/// [`GnnStack::forward_marked`].
#[derive(Clone, Debug)]
pub struct GnnStack {
    layers: Vec<GnnLayer>,
    marker: Option<MarkerRows>,
}

impl GnnStack {
    pub fn new(
        specs: &[LayerSpec],
        params: &mut ParameterSet,
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::build(specs, params, prefix, false, rng)
    }

    /// Stack whose first `in_dim` counts one leading marker column.
    pub fn with_marker(
        specs: &[LayerSpec],
        params: &mut ParameterSet,
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if specs.first().is_some_and(|s| s.in_dim < 2) {
            return Err(Error::Shape(
                "a marked stack needs at least one feature column".into(),
            ));
        }
        Self::build(specs, params, prefix, true, rng)
    }

    fn build(
        specs: &[LayerSpec],
        params: &mut ParameterSet,
        prefix: &str,
        marked: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("a GNN needs at least one layer".into()));
        }
        for w in specs.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::Shape(format!(
                    "layer output {} does not feed layer input {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut marker = None;
        for (l, spec) in specs.iter().enumerate() {
            if spec.in_dim == 0 || spec.out_dim == 0 {
                return Err(Error::Shape("layer dimensions must be positive".into()));
            }
            if !(0.0..1.0).contains(&spec.dropout) {
                return Err(Error::Config(format!("dropout {} outside [0, 1)", spec.dropout)));
            }
            let name = |s: &str| format!("{prefix}.{l}.{s}");
            let split = marked && l == 0;
            let rows = spec.in_dim - usize::from(split);
            let limit = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
            let mut weight_pair = |params: &mut ParameterSet, base: &str| {
                let mark = split.then(|| {
                    params.uniform(name(&format!("{base}_marker")), 1, spec.out_dim, limit, rng)
                });
                let w = params.uniform(name(base), rows, spec.out_dim, limit, rng);
                (w, mark)
            };
            let (weight, mark) = weight_pair(params, "weight");
            let (weight_neigh, mark_neigh) = if spec.kind == LayerKind::Sage {
                let (w, m) = weight_pair(params, "weight_neigh");
                (Some(w), m)
            } else {
                (None, None)
            };
            if let Some(m) = mark {
                marker = Some(MarkerRows {
                    weight: m,
                    weight_neigh: mark_neigh,
                });
            }
            let att = (spec.kind == LayerKind::Gat).then(|| {
                (
                    params.glorot(name("att_self"), spec.out_dim, 1, rng),
                    params.glorot(name("att_neigh"), spec.out_dim, 1, rng),
                )
            });
            let bias = params.zeros(name("bias"), 1, spec.out_dim);
            layers.push(GnnLayer {
                spec: *spec,
                weight,
                weight_neigh,
                att,
                bias,
            });
        }
        Ok(Self { layers, marker })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    /// Input width, including the marker column of a marked stack.
    pub fn in_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty").spec.out_dim
    }

    pub fn is_marked(&self) -> bool {
        self.marker.is_some()
    }

    /// Parameters of the last layer.
    pub fn final_layer_params(&self) -> Vec<ParamId> {
        let l = self.layers.last().expect("nonempty");
        let mut ids = vec![l.weight, l.bias];
        ids.extend(l.weight_neigh);
        if let Some((a, b)) = l.att {
            ids.extend([a, b]);
        }
        if self.layers.len() == 1 {
            if let Some(m) = self.marker {
                ids.push(m.weight);
                ids.extend(m.weight_neigh);
            }
        }
        ids
    }

    fn check_input(&self, tape: &Tape, ops: &GraphOps, input: &NodeInput, width: usize) -> Result<()> {
        let got = input.width(tape);
        if got != width {
            return Err(Error::Shape(format!(
                "input width {got}, first layer expects {width}"
            )));
        }
        if input.rows(tape) != ops.node_count() {
            return Err(Error::Shape(format!(
                "{} input rows for a graph of {} nodes",
                input.rows(tape),
                ops.node_count()
            )));
        }
        Ok(())
    }

    /// Runs all layers of an unmarked stack. Dropout is active only when `rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        ops: &GraphOps,
        input: NodeInput,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        if self.is_marked() {
            return Err(Error::Shape("marked stack needs forward_marked".into()));
        }
        self.check_input(tape, ops, &input, self.in_dim())?;
        let first = &self.layers[0];
        let own = input.times(tape, bound[first.weight]);
        let neigh = first.weight_neigh.map(|w| input.times(tape, bound[w]));
        let h = self.finish_layer(0, tape, bound, ops, own, neigh, rng.as_deref_mut());
        Ok(self.run_from(1, h, tape, bound, ops, rng))
    }

    /// Runs a marked stack once per marker vector, sharing the product of `features` with the
    /// first-layer weights. Each pass draws its own dropout masks.
    pub fn forward_marked(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        ops: &GraphOps,
        features: NodeInput,
        markers: &[Vec<f64>],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<Var>> {
        let marker = self
            .marker
            .ok_or_else(|| Error::Shape("stack has no marker column".into()))?;
        self.check_input(tape, ops, &features, self.in_dim() - 1)?;
        let n = ops.node_count();
        if let Some(m) = markers.iter().find(|m| m.len() != n) {
            return Err(Error::Shape(format!(
                "marker of length {} for {n} nodes",
                m.len()
            )));
        }
        let first = &self.layers[0];
        let shared = features.times(tape, bound[first.weight]);
        let shared_neigh = first.weight_neigh.map(|w| features.times(tape, bound[w]));
        let mut outs = Vec::with_capacity(markers.len());
        for m in markers {
            let column = tape.constant(Array2::from_shape_vec((n, 1), m.clone()).expect("n rows"));
            let lift = tape.matmul(column, bound[marker.weight]);
            let own = tape.add(shared, lift);
            let neigh = shared_neigh.map(|s| {
                let lift = tape.matmul(column, bound[marker.weight_neigh.expect("sage marker")]);
                tape.add(s, lift)
            });
            let h = self.finish_layer(0, tape, bound, ops, own, neigh, rng.as_deref_mut());
            outs.push(self.run_from(1, h, tape, bound, ops, rng.as_deref_mut()));
        }
        Ok(outs)
    }

    fn run_from(
        &self,
        start: usize,
        mut h: Var,
        tape: &mut Tape,
        bound: &Bound,
        ops: &GraphOps,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Var {
        for l in start..self.layers.len() {
            let layer = &self.layers[l];
            let own = tape.matmul(h, bound[layer.weight]);
            let neigh = layer.weight_neigh.map(|w| tape.matmul(h, bound[w]));
            h = self.finish_layer(l, tape, bound, ops, own, neigh, rng.as_deref_mut());
        }
        h
    }

    /// Propagation, bias, activation and dropout of layer `l`, given `x W` (and `x W_neigh`).
    #[allow(clippy::too_many_arguments)]
    fn finish_layer(
        &self,
        l: usize,
        tape: &mut Tape,
        bound: &Bound,
        ops: &GraphOps,
        own: Var,
        neigh: Option<Var>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Var {
        let layer = &self.layers[l];
        let h = match layer.spec.kind {
            LayerKind::Gcn => tape.sparse_matmul(&ops.gcn, own),
            LayerKind::Sage => {
                let agg = tape.sparse_matmul(&ops.mean, neigh.expect("sage neighbour product"));
                tape.add(own, agg)
            }
            LayerKind::Gat => {
                let (a, b) = layer.att.expect("gat attention");
                tape.gat(own, bound[a], bound[b], &ops.attention)
            }
        };
        let mut h = tape.add_row(h, bound[layer.bias]);
        if layer.spec.activation == Activation::Relu {
            h = tape.relu(h);
        }
        if let Some(rng) = rng {
            h = tape.dropout(h, layer.spec.dropout, rng);
        }
        h
    }
}

/// Convenience forward pass returning plain values.
pub fn gnn_forward(
    params: &ParameterSet,
    stack: &GnnStack,
    ops: &GraphOps,
    h0: &Array2<f64>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let bound = bind(params, &mut tape);
    let x = tape.constant(h0.clone());
    let out = stack.forward(&mut tape, &bound, ops, NodeInput::Dense(x), rng)?;
    Ok(tape.value(out).clone())
}

/// Fully connected network with ReLU between layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    dims: Vec<usize>,
}

impl Mlp {
    pub fn new(
        dims: &[usize],
        params: &mut ParameterSet,
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Shape(format!("invalid MLP dimensions {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                (
                    params.glorot(format!("{prefix}.{l}.weight"), w[0], w[1], rng),
                    params.zeros(format!("{prefix}.{l}.bias"), 1, w[1]),
                )
            })
            .collect();
        Ok(Self {
            layers,
            dims: dims.to_vec(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let width = tape.value(x).ncols();
        if width != self.dims[0] {
            return Err(Error::Shape(format!(
                "MLP input width {width}, expected {}",
                self.dims[0]
            )));
        }
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.matmul(h, bound[w]);
            h = tape.add_row(h, bound[b]);
            if l + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

pub fn mlp_forward(params: &ParameterSet, mlp: &Mlp, x: &Array2<f64>) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let bound = bind(params, &mut tape);
    let input = tape.constant(x.clone());
    let out = mlp.forward(&mut tape, &bound, input)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn gcn_without_edges_is_rowwise() {
        let g = Graph::empty(3);
        let ops = GraphOps::new(&g);
        let mut params = ParameterSet::new();
        let stack = GnnStack::new(&LayerSpec::stack(LayerKind::Gcn, 2, 4, 3, 2, 0.0), &mut params, "g", &mut rng()).unwrap();
        let h0 = array![[1.0, 2.0], [1.0, 2.0], [0.0, -1.0]];
        let out = gnn_forward(&params, &stack, &ops, &h0, None).unwrap();
        assert_eq!(out.row(0), out.row(1));
        assert_ne!(out.row(0), out.row(2));
    }

    #[test]
    fn gat_weights_sum_to_one() {
        let g = Graph::build(3, [(0, 1), (1, 2)], None).unwrap();
        let ops = GraphOps::new(&g);
        let mut params = ParameterSet::new();
        let stack = GnnStack::new(&LayerSpec::stack(LayerKind::Gat, 2, 4, 4, 1, 0.0), &mut params, "g", &mut rng()).unwrap();
        let mut tape = Tape::new();
        let bound = bind(&params, &mut tape);
        let x = tape.constant(array![[1.0, 0.0], [0.5, 2.0], [-1.0, 1.0]]);
        let z = tape.matmul(x, bound[stack.layers[0].weight]);
        let (a, b) = stack.layers[0].att.unwrap();
        let out = tape.gat(z, bound[a], bound[b], &ops.attention);
        let weights = tape.gat_weights(out).unwrap();
        assert_eq!(weights[0].len(), 2);
        for row in weights {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let g = Graph::empty(2);
        let ops = GraphOps::new(&g);
        let mut params = ParameterSet::new();
        let stack = GnnStack::new(&LayerSpec::stack(LayerKind::Sage, 3, 4, 1, 2, 0.0), &mut params, "g", &mut rng()).unwrap();
        assert!(gnn_forward(&params, &stack, &ops, &Array2::zeros((2, 2)), None).is_err());
        assert!(gnn_forward(&params, &stack, &ops, &Array2::zeros((3, 3)), None).is_err());
        let mut bad = LayerSpec::stack(LayerKind::Gcn, 3, 4, 1, 2, 0.0);
        bad[1].in_dim = 5;
        assert!(GnnStack::new(&bad, &mut params, "h", &mut rng()).is_err());
    }

    #[test]
    fn mlp_identity_and_zero() {
        let mut params = ParameterSet::new();
        let mlp = Mlp::new(&[2, 2], &mut params, "m", &mut rng()).unwrap();
        let (w, _) = mlp.layers[0];
        *params.get_mut(w) = Array2::eye(2);
        let x = array![[0.3, -4.0]];
        assert_eq!(mlp_forward(&params, &mlp, &x).unwrap(), x);
        params.get_mut(w).fill(0.0);
        assert_eq!(mlp_forward(&params, &mlp, &x).unwrap(), array![[0.0, 0.0]]);
    }

    #[test]
    fn mlp_matches_manual_product() {
        let mut params = ParameterSet::new();
        let mlp = Mlp::new(&[4, 8, 2], &mut params, "m", &mut rng()).unwrap();
        let x = array![[0.1, -0.2, 0.3, 0.7]];
        let (w1, b1) = mlp.layers[0];
        let (w2, b2) = mlp.layers[1];
        params.get_mut(b1).fill(0.05);
        params.get_mut(b2).fill(-0.1);
        let hidden = (x.dot(params.get(w1)) + params.get(b1)).mapv(|v| v.max(0.0));
        let expected = hidden.dot(params.get(w2)) + params.get(b2);
        let got = mlp_forward(&params, &mlp, &x).unwrap();
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
