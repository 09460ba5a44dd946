//! Conditional graph neural process.
//!
//! Each support pair `(q, l_q)` is encoded into a view `H_q` by a GNN whose input marks
//! `q` and its positive samples. The views are merged by a commutative operation into a
//! context `H`, and a decoder scores every node against a target query `q*` by
//! `sigmoid(<H[q*], H[v]>)`, optionally after an MLP or GNN transform of `H`.

use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_scorer, Metrics, Scorer};
use crate::graph::NodeId;
use crate::nn::{
    bind, sigmoid, Adam, Bound, GnnStack, Gradients, LayerKind, LayerSpec, Mlp, NodeInput,
    ParamId, ParameterSet, Tape, Var,
};
use crate::task::{QueryLabels, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    Sum,
    Average,
    Attention,
}

impl std::str::FromStr for CombineMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(CombineMode::Sum),
            "average" | "avg" | "mean" => Ok(CombineMode::Average),
            "attention" | "self-attention" => Ok(CombineMode::Attention),
            other => Err(Error::Config(format!("unknown combine mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for CombineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CombineMode::Sum => "sum",
            CombineMode::Average => "average",
            CombineMode::Attention => "attention",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    /// Inner product of context rows.
    Ip,
    /// Two-layer MLP on the context, then inner product.
    Mlp,
    /// Two-layer GNN on the context, then inner product.
    Gnn,
}

impl std::str::FromStr for DecoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ip" => Ok(DecoderKind::Ip),
            "mlp" => Ok(DecoderKind::Mlp),
            "gnn" => Ok(DecoderKind::Gnn),
            other => Err(Error::Config(format!("unknown decoder {other:?}"))),
        }
    }
}

impl std::fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DecoderKind::Ip => "ip",
            DecoderKind::Mlp => "mlp",
            DecoderKind::Gnn => "gnn",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CgnpConfig {
    pub encoder: LayerKind,
    pub layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub combine: CombineMode,
    pub attention_dim: usize,
    pub decoder: DecoderKind,
    pub mlp_hidden: usize,
    pub decoder_layers: usize,
    pub threshold: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Labels sampled per query-set query at every training step.
    pub query_pos: usize,
    pub query_neg: usize,
    /// Validation F1 is computed every this many epochs (and after the last one).
    pub valid_every: usize,
}

impl Default for CgnpConfig {
    fn default() -> Self {
        Self {
            encoder: LayerKind::Gat,
            layers: 3,
            hidden: 128,
            dropout: 0.2,
            combine: CombineMode::Average,
            attention_dim: 128,
            decoder: DecoderKind::Gnn,
            mlp_hidden: 512,
            decoder_layers: 2,
            threshold: 0.5,
            epochs: 200,
            lr: 5e-4,
            query_pos: 5,
            query_neg: 10,
            valid_every: 1,
        }
    }
}

impl CgnpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if self.layers == 0 || self.hidden == 0 || self.decoder_layers == 0 {
            return Err(Error::Config("layer counts and widths must be positive".into()));
        }
        if self.valid_every == 0 {
            return Err(Error::Config("valid_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Decoder {
    InnerProduct,
    Mlp(Mlp),
    Gnn(GnnStack),
}

/// Model structure; the weights live in a separate [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct Cgnp {
    pub config: CgnpConfig,
    pub feature_dim: usize,
    encoder: GnnStack,
    attention: Option<(ParamId, ParamId)>,
    decoder: Decoder,
}

/// Marks `q` and its positive samples.
pub fn identifier(n: usize, labels: &QueryLabels) -> Vec<f64> {
    let mut ind = vec![0.0; n];
    ind[labels.query] = 1.0;
    for &v in &labels.positives {
        ind[v] = 1.0;
    }
    ind
}

/// `{v : p(v) ≥ τ} ∪ {q}`.
pub fn predict_community(p: &[f64], query: NodeId, threshold: f64) -> Vec<NodeId> {
    (0..p.len())
        .filter(|&v| v == query || p[v] >= threshold)
        .collect()
}

impl Cgnp {
    pub fn new(config: CgnpConfig, feature_dim: usize, seed: u64) -> Result<(Self, ParameterSet)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let d = config.hidden;
        let specs = LayerSpec::stack(config.encoder, feature_dim + 1, d, d, config.layers, config.dropout);
        let encoder = GnnStack::with_marker(&specs, &mut params, "encoder", &mut rng)?;
        let attention = (config.combine == CombineMode::Attention).then(|| {
            (
                params.glorot("combine.w1", d, config.attention_dim, &mut rng),
                params.glorot("combine.w2", d, config.attention_dim, &mut rng),
            )
        });
        let decoder = match config.decoder {
            DecoderKind::Ip => Decoder::InnerProduct,
            DecoderKind::Mlp => Decoder::Mlp(Mlp::new(&[d, config.mlp_hidden, d], &mut params, "decoder", &mut rng)?),
            DecoderKind::Gnn => {
                let specs = LayerSpec::stack(config.encoder, d, d, d, config.decoder_layers, config.dropout);
                Decoder::Gnn(GnnStack::new(&specs, &mut params, "decoder", &mut rng)?)
            }
        };
        Ok((
            Self {
                config,
                feature_dim,
                encoder,
                attention,
                decoder,
            },
            params,
        ))
    }

    fn check_task(&self, task: &Task) -> Result<()> {
        if task.feature_dim() != self.feature_dim {
            return Err(Error::Shape(format!(
                "task features have width {}, model expects {}",
                task.feature_dim(),
                self.feature_dim
            )));
        }
        Ok(())
    }

    /// One encoder view per support pair, sharing the feature product.
    fn views(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        task: &Task,
        support: &[QueryLabels],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<Var>> {
        let n = task.node_count();
        let mut markers = Vec::with_capacity(support.len());
        for labels in support {
            if labels.query >= n || labels.positives.iter().any(|&v| v >= n) {
                return Err(Error::Input(format!("query {} outside the task graph", labels.query)));
            }
            markers.push(identifier(n, labels));
        }
        let input = NodeInput::Sparse(Arc::clone(&task.features));
        self.encoder.forward_marked(tape, bound, task.ops(), input, &markers, rng)
    }

    fn combine(&self, tape: &mut Tape, bound: &Bound, views: &[Var]) -> Result<Var> {
        let (&first, rest) = views
            .split_first()
            .ok_or_else(|| Error::Input("no support views to combine".into()))?;
        Ok(match self.config.combine {
            CombineMode::Sum | CombineMode::Average => {
                let mut h = first;
                for &v in rest {
                    h = tape.add(h, v);
                }
                if self.config.combine == CombineMode::Average && !rest.is_empty() {
                    h = tape.scale(h, 1.0 / views.len() as f64);
                }
                h
            }
            CombineMode::Attention => {
                let (w1, w2) = self.attention.expect("attention weights");
                let queries: Vec<Var> = views.iter().map(|&v| tape.matmul(v, bound[w1])).collect();
                let keys: Vec<Var> = views.iter().map(|&v| tape.matmul(v, bound[w2])).collect();
                let scale = 1.0 / (self.config.attention_dim as f64).sqrt();
                tape.attention_mix(views, &queries, &keys, scale)
            }
        })
    }

    /// Context after the decoder transform.
    fn context(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        task: &Task,
        support: &[QueryLabels],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        self.check_task(task)?;
        let views = self.views(tape, bound, task, support, rng.as_deref_mut())?;
        let h = self.combine(tape, bound, &views)?;
        match &self.decoder {
            Decoder::InnerProduct => Ok(h),
            Decoder::Mlp(mlp) => mlp.forward(tape, bound, h),
            Decoder::Gnn(gnn) => gnn.forward(tape, bound, task.ops(), NodeInput::Dense(h), rng),
        }
    }

    /// `n × k` logits of every node against each of `queries`.
    fn logits(&self, tape: &mut Tape, h: Var, queries: &[NodeId]) -> Var {
        let rows = tape.select_rows(h, queries);
        let cols = tape.transpose(rows);
        tape.matmul(h, cols)
    }

    /// The view `H_q` of one support pair (no dropout).
    pub fn encode_view(&self, params: &ParameterSet, task: &Task, labels: &QueryLabels) -> Result<Array2<f64>> {
        self.check_task(task)?;
        let mut tape = Tape::new();
        let bound = bind(params, &mut tape);
        let v = self.views(&mut tape, &bound, task, std::slice::from_ref(labels), None)?;
        Ok(tape.value(v[0]).clone())
    }

    /// Combines precomputed views with this model's commutative operation.
    pub fn combine_views(&self, params: &ParameterSet, views: &[Array2<f64>]) -> Result<Array2<f64>> {
        if let Some(w) = views.windows(2).find(|w| w[0].dim() != w[1].dim()) {
            return Err(Error::Shape(format!("views of shapes {:?} and {:?}", w[0].dim(), w[1].dim())));
        }
        let mut tape = Tape::new();
        let bound = bind(params, &mut tape);
        let vars: Vec<Var> = views.iter().map(|v| tape.constant(v.clone())).collect();
        let h = self.combine(&mut tape, &bound, &vars)?;
        Ok(tape.value(h).clone())
    }

    /// Summed BCE of the query-set labels given the support set, and its gradient.
    pub fn episode_loss(
        &self,
        params: &ParameterSet,
        task: &Task,
        support: &[QueryLabels],
        targets: &[QueryLabels],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Gradients)> {
        if targets.is_empty() {
            return Err(Error::Input("empty query set".into()));
        }
        let mut tape = Tape::new();
        let bound = bind(params, &mut tape);
        let h = self.context(&mut tape, &bound, task, support, rng)?;
        let queries: Vec<NodeId> = targets.iter().map(|t| t.query).collect();
        let logits = self.logits(&mut tape, h, &queries);
        let mut entries = Vec::new();
        for (k, t) in targets.iter().enumerate() {
            entries.extend(t.positives.iter().map(|&v| (v, k, 1.0)));
            entries.extend(t.negatives.iter().map(|&v| (v, k, 0.0)));
        }
        let loss = tape.bce_logits(logits, entries);
        Ok((tape.scalar(loss), tape.gradients(loss, params)))
    }

    /// Membership probabilities of every node for each query, conditioned on `support`.
    /// A pure forward pass.
    pub fn predict(
        &self,
        params: &ParameterSet,
        task: &Task,
        support: &[QueryLabels],
        queries: &[NodeId],
    ) -> Result<Vec<Vec<f64>>> {
        if let Some(q) = queries.iter().find(|&&q| q >= task.node_count()) {
            return Err(Error::Input(format!("query {q} outside the task graph")));
        }
        let mut tape = Tape::new();
        let bound = bind(params, &mut tape);
        let h = self.context(&mut tape, &bound, task, support, None)?;
        let logits = self.logits(&mut tape, h, queries);
        let x = tape.value(logits);
        Ok((0..queries.len())
            .map(|k| x.column(k).iter().map(|&z| sigmoid(z)).collect())
            .collect())
    }

    /// Probabilities for one target query, using the task's whole support set.
    pub fn meta_test(&self, params: &ParameterSet, task: &Task, query: NodeId) -> Result<Vec<f64>> {
        if task.support.iter().any(|s| s.query == query) {
            return Err(Error::Input(format!("query {query} belongs to the support set")));
        }
        Ok(self.predict(params, task, &task.support, &[query])?.remove(0))
    }

    /// Probabilities for every query-set query of `task`.
    pub fn predict_task(&self, params: &ParameterSet, task: &Task) -> Result<Vec<Vec<f64>>> {
        let queries: Vec<NodeId> = task.queryset.iter().map(|t| t.query).collect();
        self.predict(params, task, &task.support, &queries)
    }

    /// Mean metrics over every query-set query of `tasks`.
    pub fn evaluate(&self, params: &ParameterSet, tasks: &[Task]) -> Result<Metrics> {
        evaluate_scorer(&self.scorer(params), tasks)
    }

    pub fn scorer<'a>(&'a self, params: &'a ParameterSet) -> CgnpScorer<'a> {
        CgnpScorer { model: self, params }
    }
}

/// A model together with trained parameters.
#[derive(Clone, Copy, Debug)]
pub struct CgnpScorer<'a> {
    pub model: &'a Cgnp,
    pub params: &'a ParameterSet,
}

impl Scorer for CgnpScorer<'_> {
    fn predict_task(&self, task: &Task) -> Result<Vec<Vec<f64>>> {
        self.model.predict_task(self.params, task)
    }

    fn threshold(&self) -> f64 {
        self.model.config.threshold
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training episode loss of every epoch.
    pub epoch_loss: Vec<f64>,
    /// `(epoch, F1)` of every validation pass.
    pub valid_f1: Vec<(usize, f64)>,
    pub best_epoch: Option<usize>,
}

/// Episodic training: every epoch shuffles the tasks and takes one Adam step per task on its
/// query-set loss. With validation tasks the parameters of the best validation F1 are kept.
pub fn meta_train(
    model: &Cgnp,
    params: &mut ParameterSet,
    train: &[Task],
    valid: &[Task],
    rng: &mut ChaCha8Rng,
) -> Result<TrainReport> {
    let cfg = &model.config;
    let mut adam = Adam::new(cfg.lr);
    let mut report = TrainReport::default();
    let mut best: Option<(f64, ParameterSet)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for &i in &order {
            let task = &train[i];
            let n = task.node_count();
            let targets: Vec<QueryLabels> = task
                .queryset
                .iter()
                .map(|t| t.sample_labels(n, cfg.query_pos, cfg.query_neg, rng))
                .collect();
            let (loss, grads) = model.episode_loss(params, task, &task.support, &targets, Some(rng))?;
            adam.step(params, &grads)?;
            total += loss;
        }
        report.epoch_loss.push(total / train.len().max(1) as f64);
        if !valid.is_empty() && (epoch % cfg.valid_every == 0 || epoch == cfg.epochs) {
            let f1 = model.evaluate(params, valid)?.f1;
            report.valid_f1.push((epoch, f1));
            if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                best = Some((f1, params.clone()));
                report.best_epoch = Some(epoch);
            }
        }
    }
    if let Some((_, p)) = best {
        *params = p;
    }
    Ok(report)
}
