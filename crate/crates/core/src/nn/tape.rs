//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation in evaluation order; [`Tape::gradients`] walks it
//! backwards once. Parameters enter the tape by reference through [`bind`], so a forward
//! pass never copies weights.

use std::borrow::Cow;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::Rng;

use super::params::{Gradients, ParamId, ParameterSet};
use super::sparse::SparseMatrix;

/// Handle of a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    SpMatMul(Arc<SparseMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    SelectRows(Var, Vec<usize>),
    MeanRows(Var),
    Relu(Var),
    Mask(Var, Array2<f64>),
    Gat {
        z: Var,
        a_self: Var,
        a_neigh: Var,
        pattern: Arc<SparseMatrix>,
        pre: Vec<f64>,
        alpha: Vec<f64>,
    },
    AttentionMix {
        views: Vec<Var>,
        queries: Vec<Var>,
        keys: Vec<Var>,
        scale: f64,
        // attention[v][i][j] flattened
        attention: Vec<f64>,
    },
    RowDist(Var, Var),
    BceLogits {
        logits: Var,
        entries: Vec<(usize, usize, f64)>,
    },
}

struct Node<'a> {
    value: Cow<'a, Array2<f64>>,
    op: Op,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Tape handles of every tensor in a [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.index()]
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.index()]
    }
}

/// Records every parameter as a leaf of `tape`.
pub fn bind<'a>(params: &'a ParameterSet, tape: &mut Tape<'a>) -> Bound {
    Bound(
        params
            .ids()
            .map(|id| tape.push(Cow::Borrowed(params.get(id)), Op::Leaf(Some(id))))
            .collect(),
    )
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

const GAT_SLOPE: f64 = 0.2;

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Cow<'a, Array2<f64>>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn owned(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.push(Cow::Owned(value), op)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// A constant (receives no gradient that is reported).
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.owned(value, Op::Leaf(None))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.owned(value, Op::MatMul(a, b))
    }

    pub fn sparse_matmul(&mut self, s: &Arc<SparseMatrix>, b: Var) -> Var {
        let value = s.dot(self.value(b));
        self.owned(value, Op::SpMatMul(Arc::clone(s), b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.owned(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.owned(value, Op::Sub(a, b))
    }

    /// `a + 1 · row` where `row` is `1 × d`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        self.owned(value, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.owned(value, Op::Scale(a, c))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.owned(value, Op::Transpose(a))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let value = self.value(a).select(Axis(0), rows);
        self.owned(value, Op::SelectRows(a, rows.to_vec()))
    }

    /// Column means as a `1 × d` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = x
            .mean_axis(Axis(0))
            .expect("mean of an empty matrix")
            .insert_axis(Axis(0));
        self.owned(value, Op::MeanRows(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.owned(value, Op::Relu(a))
    }

    /// Inverted dropout with drop probability `p`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl Rng) -> Var {
        if p <= 0.0 {
            return a;
        }
        let keep = 1.0 - p;
        let mask = self
            .value(a)
            .mapv(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 });
        let value = self.value(a) * &mask;
        self.owned(value, Op::Mask(a, mask))
    }

    /// Single-head additive graph attention.
    ///
    /// For row `i` and each column `j` stored in row `i` of `pattern`:
    /// `e_ij = LeakyReLU(z_i · a_self + z_j · a_neigh)`, `alpha_i = softmax_j(e_ij)`,
    /// output row `i` is `sum_j alpha_ij z_j`.
    pub fn gat(&mut self, z: Var, a_self: Var, a_neigh: Var, pattern: &Arc<SparseMatrix>) -> Var {
        let zv = self.value(z);
        let s = zv.dot(self.value(a_self));
        let t = zv.dot(self.value(a_neigh));
        let mut pre = Vec::with_capacity(pattern.nnz());
        let mut alpha = Vec::with_capacity(pattern.nnz());
        let mut out = Array2::zeros(zv.dim());
        for i in 0..pattern.rows() {
            let cols = pattern.row_indices(i);
            let start = alpha.len();
            for &j in cols {
                let x = s[[i, 0]] + t[[j, 0]];
                pre.push(x);
                alpha.push(if x > 0.0 { x } else { GAT_SLOPE * x });
            }
            softmax_in_place(&mut alpha[start..]);
            let mut row = out.row_mut(i);
            for (k, &j) in cols.iter().enumerate() {
                row.scaled_add(alpha[start + k], &zv.row(j));
            }
        }
        self.owned(
            out,
            Op::Gat {
                z,
                a_self,
                a_neigh,
                pattern: Arc::clone(pattern),
                pre,
                alpha,
            },
        )
    }

    /// Attention weights `alpha_ij` of a [`Tape::gat`] node, row by row.
    pub fn gat_weights(&self, v: Var) -> Option<Vec<Vec<f64>>> {
        match &self.nodes[v.0].op {
            Op::Gat { pattern, alpha, .. } => {
                let mut start = 0;
                let mut rows = Vec::with_capacity(pattern.rows());
                for i in 0..pattern.rows() {
                    let len = pattern.row_indices(i).len();
                    rows.push(alpha[start..start + len].to_vec());
                    start += len;
                }
                Some(rows)
            }
            _ => None,
        }
    }

    /// Per-row self-attention across `m` stacked views.
    ///
    /// For every row `v`: `S_ij = scale · queries_i[v] · keys_j[v]`, `A = softmax` over `j`,
    /// and the output row is the mean over `i` of `sum_j A_ij views_j[v]`.
    pub fn attention_mix(
        &mut self,
        views: &[Var],
        queries: &[Var],
        keys: &[Var],
        scale: f64,
    ) -> Var {
        let m = views.len();
        assert!(m > 0 && queries.len() == m && keys.len() == m);
        let (n, d) = self.value(views[0]).dim();
        let mut attention = vec![0.0; n * m * m];
        let mut out = Array2::zeros((n, d));
        for v in 0..n {
            let block = &mut attention[v * m * m..(v + 1) * m * m];
            for i in 0..m {
                let q = self.value(queries[i]).row(v);
                for j in 0..m {
                    block[i * m + j] = scale * q.dot(&self.value(keys[j]).row(v));
                }
                softmax_in_place(&mut block[i * m..(i + 1) * m]);
            }
            let mut row = out.row_mut(v);
            for j in 0..m {
                let c: f64 = (0..m).map(|i| block[i * m + j]).sum::<f64>() / m as f64;
                row.scaled_add(c, &self.value(views[j]).row(v));
            }
        }
        self.owned(
            out,
            Op::AttentionMix {
                views: views.to_vec(),
                queries: queries.to_vec(),
                keys: keys.to_vec(),
                scale,
                attention,
            },
        )
    }

    /// The `m × m` attention matrix of row `v` from an [`Tape::attention_mix`] node.
    pub fn attention_matrix(&self, node: Var, v: usize) -> Option<Array2<f64>> {
        match &self.nodes[node.0].op {
            Op::AttentionMix {
                views, attention, ..
            } => {
                let m = views.len();
                Array2::from_shape_vec((m, m), attention[v * m * m..(v + 1) * m * m].to_vec())
                    .ok()
            }
            _ => None,
        }
    }

    /// Euclidean distance of every row of `x` to the `1 × d` row `c`, as `n × 1`.
    pub fn row_dist(&mut self, x: Var, c: Var) -> Var {
        let cv = self.value(c).row(0).to_owned();
        let value = Array2::from_shape_fn((self.value(x).nrows(), 1), |(i, _)| {
            let diff = &self.value(x).row(i) - &cv;
            diff.dot(&diff).sqrt()
        });
        self.owned(value, Op::RowDist(x, c))
    }

    /// `sum softplus(x) - y x` over the given `(row, col, target)` entries of a logit matrix:
    /// binary cross entropy of `sigmoid(x)` against `y`, summed. Returns a `1 × 1` node.
    pub fn bce_logits(&mut self, logits: Var, entries: Vec<(usize, usize, f64)>) -> Var {
        let x = self.value(logits);
        let loss: f64 = entries
            .iter()
            .map(|&(r, c, y)| softplus(x[[r, c]]) - y * x[[r, c]])
            .sum();
        self.owned(
            Array2::from_elem((1, 1), loss),
            Op::BceLogits { logits, entries },
        )
    }

    /// Gradients of the scalar node `out` with respect to every bound parameter.
    pub fn gradients(&self, out: Var, params: &ParameterSet) -> Gradients {
        let grads = self.backward(out);
        let mut result = Gradients::zeros_like(params);
        for (node, grad) in self.nodes.iter().zip(grads) {
            if let (Op::Leaf(Some(id)), Some(g)) = (&node.op, grad) {
                result.0[id.index()] += &g;
            }
        }
        result
    }

    /// Gradient with respect to every node (None where no gradient flows).
    fn backward(&self, out: Var) -> Vec<Option<Array2<f64>>> {
        assert_eq!(self.value(out).dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf(_) => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::SpMatMul(s, b) => acc(&mut grads, *b, s.t_dot(&g)),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::SelectRows(a, rows) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    for (i, &r) in rows.iter().enumerate() {
                        ga.row_mut(r).scaled_add(1.0, &g.row(i));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).nrows();
                    let ga = Array2::from_shape_fn(self.value(*a).dim(), |(_, c)| g[[0, c]] / n as f64);
                    acc(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&node.value, |gi, &y| {
                        if y <= 0.0 {
                            *gi = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Mask(a, mask) => acc(&mut grads, *a, g * mask),
                Op::Gat {
                    z,
                    a_self,
                    a_neigh,
                    pattern,
                    pre,
                    alpha,
                } => {
                    let zv = self.value(*z);
                    let n = zv.nrows();
                    let mut gz = Array2::zeros(zv.dim());
                    let mut ds = Array2::zeros((n, 1));
                    let mut dt = Array2::zeros((n, 1));
                    let mut k0 = 0;
                    for i in 0..n {
                        let cols = pattern.row_indices(i);
                        let gi = g.row(i);
                        let dalpha: Vec<f64> = cols.iter().map(|&j| gi.dot(&zv.row(j))).collect();
                        let mean: f64 = (0..cols.len()).map(|k| alpha[k0 + k] * dalpha[k]).sum();
                        for (k, &j) in cols.iter().enumerate() {
                            let a = alpha[k0 + k];
                            gz.row_mut(j).scaled_add(a, &gi);
                            let de = a * (dalpha[k] - mean);
                            let dx = if pre[k0 + k] > 0.0 { de } else { GAT_SLOPE * de };
                            ds[[i, 0]] += dx;
                            dt[[j, 0]] += dx;
                        }
                        k0 += cols.len();
                    }
                    gz += &ds.dot(&self.value(*a_self).t());
                    gz += &dt.dot(&self.value(*a_neigh).t());
                    acc(&mut grads, *a_self, zv.t().dot(&ds));
                    acc(&mut grads, *a_neigh, zv.t().dot(&dt));
                    acc(&mut grads, *z, gz);
                }
                Op::AttentionMix {
                    views,
                    queries,
                    keys,
                    scale,
                    attention,
                } => {
                    let m = views.len();
                    let zeros = |v: &Var| Array2::<f64>::zeros(self.value(*v).dim());
                    let mut gh: Vec<_> = views.iter().map(zeros).collect();
                    let mut gq: Vec<_> = queries.iter().map(zeros).collect();
                    let mut gk: Vec<_> = keys.iter().map(zeros).collect();
                    let n = g.nrows();
                    let mut dc = vec![0.0; m];
                    for v in 0..n {
                        let block = &attention[v * m * m..(v + 1) * m * m];
                        let gv = g.row(v);
                        for j in 0..m {
                            let c: f64 = (0..m).map(|i| block[i * m + j]).sum::<f64>() / m as f64;
                            gh[j].row_mut(v).scaled_add(c, &gv);
                            dc[j] = gv.dot(&self.value(views[j]).row(v)) / m as f64;
                        }
                        for i in 0..m {
                            let row = &block[i * m..(i + 1) * m];
                            let mean: f64 = row.iter().zip(&dc).map(|(a, d)| a * d).sum();
                            for j in 0..m {
                                let ds = scale * row[j] * (dc[j] - mean);
                                if ds != 0.0 {
                                    gq[i].row_mut(v).scaled_add(ds, &self.value(keys[j]).row(v));
                                    gk[j].row_mut(v).scaled_add(ds, &self.value(queries[i]).row(v));
                                }
                            }
                        }
                    }
                    for (v, gv) in views.iter().zip(gh) {
                        acc(&mut grads, *v, gv);
                    }
                    for (v, gv) in queries.iter().zip(gq) {
                        acc(&mut grads, *v, gv);
                    }
                    for (v, gv) in keys.iter().zip(gk) {
                        acc(&mut grads, *v, gv);
                    }
                }
                Op::RowDist(x, c) => {
                    let xv = self.value(*x);
                    let cv = self.value(*c).row(0);
                    let mut gx = Array2::zeros(xv.dim());
                    for i in 0..xv.nrows() {
                        let dist = node.value[[i, 0]];
                        if dist > 0.0 {
                            let diff = &xv.row(i) - &cv;
                            gx.row_mut(i).scaled_add(g[[i, 0]] / dist, &diff);
                        }
                    }
                    let gc = -gx.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *c, gc);
                    acc(&mut grads, *x, gx);
                }
                Op::BceLogits { logits, entries } => {
                    let x = self.value(*logits);
                    let mut gl = Array2::zeros(x.dim());
                    for &(r, c, y) in entries {
                        gl[[r, c]] += g[[0, 0]] * (sigmoid(x[[r, c]]) - y);
                    }
                    acc(&mut grads, *logits, gl);
                }
            }
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_gradient_by_hand() {
        let mut params = ParameterSet::new();
        let w = params.add("w", array![[1.0, 2.0], [3.0, 4.0]]);
        let mut tape = Tape::new();
        let bound = bind(&params, &mut tape);
        let x = tape.constant(array![[1.0, -1.0]]);
        let y = tape.matmul(x, bound[w]);
        let e = tape.bce_logits(y, vec![(0, 0, 1.0)]);
        let grads = tape.gradients(e, &params);
        // d/dw (softplus(y0) - y0) at y0 = -2: (sigmoid(-2) - 1) * x
        let s = sigmoid(-2.0) - 1.0;
        assert!((grads.get(w)[[0, 0]] - s).abs() < 1e-12);
        assert!((grads.get(w)[[1, 0]] + s).abs() < 1e-12);
        assert_eq!(grads.get(w)[[0, 1]], 0.0);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut tape = Tape::new();
        let views: Vec<Var> = (0..3)
            .map(|k| tape.constant(Array2::from_shape_fn((4, 2), |(i, j)| (i + j * k) as f64 * 0.3)))
            .collect();
        let out = tape.attention_mix(&views, &views, &views, 0.7);
        for v in 0..4 {
            let a = tape.attention_matrix(out, v).unwrap();
            for row in a.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }
}
