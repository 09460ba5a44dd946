//! Comparison learners over the same tasks and GNN substrate as CGNP: a per-task supervised
//! GNN, feature transfer, MAML, Reptile and a graph prototypical network.
//!
//! The first four share [`QueryGnn`], a GNN with a one-column query identifier input and a
//! single output logit per node.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cgnp::TrainReport;
use crate::error::{Error, Result};
use crate::eval::{evaluate_scorer, Scorer};
use crate::graph::NodeId;
use crate::nn::{
    bind, sgd_step, sigmoid, Adam, Bound, GnnStack, Gradients, LayerKind, LayerSpec, NodeInput,
    ParamId, ParameterSet, Tape, Var,
};
use crate::task::{QueryLabels, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Supervised,
    FeatTrans,
    Maml,
    Reptile,
    Gpn,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::Supervised,
        BaselineKind::FeatTrans,
        BaselineKind::Maml,
        BaselineKind::Reptile,
        BaselineKind::Gpn,
    ];
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "supervised" => Ok(BaselineKind::Supervised),
            "feattrans" => Ok(BaselineKind::FeatTrans),
            "maml" => Ok(BaselineKind::Maml),
            "reptile" => Ok(BaselineKind::Reptile),
            "gpn" => Ok(BaselineKind::Gpn),
            other => Err(Error::Config(format!("unknown baseline {other:?}"))),
        }
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BaselineKind::Supervised => "supervised",
            BaselineKind::FeatTrans => "feattrans",
            BaselineKind::Maml => "maml",
            BaselineKind::Reptile => "reptile",
            BaselineKind::Gpn => "gpn",
        })
    }
}

/// How Reptile turns the adapted parameters into an update of the initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OuterRule {
    /// `θ ← θ + β (θᵢ − θ)`.
    Sgd,
    /// Adam with learning rate β on the pseudo-gradient `θ − θᵢ`.
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub gnn: LayerKind,
    pub layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    /// Adam learning rate of Supervised, FeatTrans pretraining and GPN.
    pub lr: f64,
    /// α: inner SGD rate of MAML and Reptile, also the FeatTrans finetuning step.
    pub inner_lr: f64,
    /// β: outer learning rate of MAML and Reptile.
    pub outer_lr: f64,
    pub inner_steps_train: usize,
    pub inner_steps_test: usize,
    pub epochs: usize,
    pub second_order: bool,
    pub reptile_outer: OuterRule,
    pub gpn_proto_pos: usize,
    pub gpn_proto_neg: usize,
    pub query_pos: usize,
    pub query_neg: usize,
    /// Labelled query-set queries per gradient computation during meta-training (all when
    /// unset). Reptile cycles through its labels in batches of this size across inner steps.
    pub query_batch: Option<usize>,
    pub threshold: f64,
    /// Validation period in epochs; 0 disables model selection.
    pub valid_every: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            gnn: LayerKind::Gat,
            layers: 3,
            hidden: 128,
            dropout: 0.2,
            lr: 5e-4,
            inner_lr: 5e-4,
            outer_lr: 1e-3,
            inner_steps_train: 10,
            inner_steps_test: 20,
            epochs: 200,
            second_order: false,
            reptile_outer: OuterRule::Adam,
            gpn_proto_pos: 3,
            gpn_proto_neg: 3,
            query_pos: 5,
            query_neg: 10,
            query_batch: None,
            threshold: 0.5,
            valid_every: 1,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.hidden == 0 {
            return bad("layers and hidden width must be positive".into());
        }
        if self.inner_steps_train == 0 || self.inner_steps_test == 0 {
            return bad("inner step counts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        for (name, x) in [("lr", self.lr), ("inner_lr", self.inner_lr), ("outer_lr", self.outer_lr)] {
            if !(x.is_finite() && x >= 0.0) {
                return bad(format!("{name} must be a non-negative number"));
            }
        }
        if self.gpn_proto_pos == 0 || self.gpn_proto_neg == 0 {
            return bad("prototypes need at least one sample per class".into());
        }
        if self.query_batch == Some(0) {
            return bad("query_batch must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold {} outside [0, 1]", self.threshold));
        }
        if self.second_order && self.inner_steps_train > 2 {
            return bad("second-order MAML is limited to at most 2 inner steps".into());
        }
        Ok(())
    }
}

/// Deterministic per-task generator derived from a model seed and a task id.
pub fn task_rng(seed: u64, task_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(task_id.as_bytes());
    let digest = h.finalize();
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")))
}

fn check_features(task: &Task, expected: usize) -> Result<()> {
    if task.feature_dim() != expected {
        return Err(Error::Shape(format!(
            "task features have width {}, model expects {expected}",
            task.feature_dim()
        )));
    }
    Ok(())
}

fn check_labels(task: &Task, labels: &QueryLabels) -> Result<()> {
    let n = task.node_count();
    let out = std::iter::once(&labels.query)
        .chain(&labels.positives)
        .chain(&labels.negatives)
        .find(|&&v| v >= n);
    match out {
        Some(v) => Err(Error::Input(format!("node {v} outside a task graph of {n} nodes"))),
        None => Ok(()),
    }
}

/// GNN over `[I_q ‖ features]` with one logit per node.
#[derive(Clone, Debug)]
pub struct QueryGnn {
    stack: GnnStack,
    feature_dim: usize,
}

impl QueryGnn {
    pub fn new(
        cfg: &BaselineConfig,
        feature_dim: usize,
        params: &mut ParameterSet,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let specs = LayerSpec::stack(cfg.gnn, feature_dim + 1, cfg.hidden, 1, cfg.layers, cfg.dropout);
        Ok(Self {
            stack: GnnStack::with_marker(&specs, params, "gnn", rng)?,
            feature_dim,
        })
    }

    pub fn final_layer_params(&self) -> Vec<ParamId> {
        self.stack.final_layer_params()
    }

    fn logits(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        task: &Task,
        queries: &[NodeId],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<Var>> {
        check_features(task, self.feature_dim)?;
        let n = task.node_count();
        let mut markers = Vec::with_capacity(queries.len());
        for &q in queries {
            if q >= n {
                return Err(Error::Input(format!("query {q} outside the task graph")));
            }
            let mut m = vec![0.0; n];
            m[q] = 1.0;
            markers.push(m);
        }
        let input = NodeInput::Sparse(task.features.clone());
        self.stack.forward_marked(tape, bound, task.ops(), input, &markers, rng)
    }

    /// Summed BCE over every labelled node of every entry of `labels`, and its gradient.
    pub fn loss(
        &self,
        params: &ParameterSet,
        task: &Task,
        labels: &[QueryLabels],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Gradients)> {
        if labels.is_empty() {
            return Err(Error::Input("no labelled queries".into()));
        }
        for l in labels {
            check_labels(task, l)?;
        }
        let mut tape = Tape::new();
        let bound = bind(params, &mut tape);
        let queries: Vec<NodeId> = labels.iter().map(|l| l.query).collect();
        let logits = self.logits(&mut tape, &bound, task, &queries, rng)?;
        let mut total: Option<Var> = None;
        for (z, l) in logits.into_iter().zip(labels) {
            let entries = l
                .positives
                .iter()
                .map(|&v| (v, 0, 1.0))
                .chain(l.negatives.iter().map(|&v| (v, 0, 0.0)))
                .collect();
            let term = tape.bce_logits(z, entries);
            total = Some(match total {
                Some(t) => tape.add(t, term),
                None => term,
            });
        }
        let total = total.expect("nonempty labels");
        Ok((tape.scalar(total), tape.gradients(total, params)))
    }

    pub fn probabilities(
        &self,
        params: &ParameterSet,
        task: &Task,
        queries: &[NodeId],
    ) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let bound = bind(params, &mut tape);
        let logits = self.logits(&mut tape, &bound, task, queries, None)?;
        Ok(logits
            .into_iter()
            .map(|z| tape.value(z).iter().map(|&x| sigmoid(x)).collect())
            .collect())
    }
}

fn queryset_queries(task: &Task) -> Vec<NodeId> {
    task.queryset.iter().map(|t| t.query).collect()
}

fn sampled_targets(task: &Task, cfg: &BaselineConfig, rng: &mut ChaCha8Rng) -> Vec<QueryLabels> {
    let n = task.node_count();
    task.queryset
        .iter()
        .map(|t| t.sample_labels(n, cfg.query_pos, cfg.query_neg, rng))
        .collect()
}

/// A random subset of `query_batch` entries, or everything.
fn batch_of(mut labels: Vec<QueryLabels>, cfg: &BaselineConfig, rng: &mut ChaCha8Rng) -> Vec<QueryLabels> {
    if let Some(b) = cfg.query_batch {
        if b < labels.len() {
            labels.shuffle(rng);
            labels.truncate(b);
        }
    }
    labels
}

fn child_rng(rng: &mut ChaCha8Rng) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(rng.gen())
}

/// Keeps the parameters of the best validation F1 seen so far.
struct Selection {
    every: usize,
    best: Option<(f64, ParameterSet)>,
}

impl Selection {
    fn new(every: usize) -> Self {
        Self { every, best: None }
    }

    fn due(&self, epoch: usize, last: usize, valid: &[Task]) -> bool {
        !valid.is_empty() && self.every > 0 && (epoch.is_multiple_of(self.every) || epoch == last)
    }

    fn offer(&mut self, report: &mut TrainReport, epoch: usize, f1: f64, params: &ParameterSet) {
        report.valid_f1.push((epoch, f1));
        if self.best.as_ref().is_none_or(|(b, _)| f1 > *b) {
            self.best = Some((f1, params.clone()));
            report.best_epoch = Some(epoch);
        }
    }

    fn restore(self, params: &mut ParameterSet) {
        if let Some((_, p)) = self.best {
            *params = p;
        }
    }
}

/// A GNN trained from scratch on the support set of each test task.
#[derive(Clone, Debug)]
pub struct Supervised {
    pub config: BaselineConfig,
    feature_dim: usize,
    seed: u64,
}

impl Supervised {
    pub fn new(config: BaselineConfig, feature_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            feature_dim,
            seed,
        })
    }

    /// Trains a fresh network on `task.support`; returns it with the loss before every epoch.
    pub fn fit(&self, task: &Task) -> Result<(QueryGnn, ParameterSet, Vec<f64>)> {
        if task.support.is_empty() {
            return Err(Error::Input(format!("task {} has an empty support set", task.id)));
        }
        let mut rng = task_rng(self.seed, &task.id);
        let mut params = ParameterSet::new();
        let net = QueryGnn::new(&self.config, self.feature_dim, &mut params, &mut rng)?;
        let mut adam = Adam::new(self.config.lr);
        let mut curve = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            let (loss, grads) = net.loss(&params, task, &task.support, Some(&mut rng))?;
            adam.step(&mut params, &grads)?;
            curve.push(loss);
        }
        Ok((net, params, curve))
    }
}

impl Scorer for Supervised {
    fn predict_task(&self, task: &Task) -> Result<Vec<Vec<f64>>> {
        let (net, params, _) = self.fit(task)?;
        net.probabilities(&params, task, &queryset_queries(task))
    }

    fn threshold(&self) -> f64 {
        self.config.threshold
    }
}

/// Pretrained on all training labels; at test only the last layer takes one gradient step on
/// the support set.
#[derive(Clone, Debug)]
pub struct FeatTrans {
    pub config: BaselineConfig,
    pub net: QueryGnn,
    pub params: ParameterSet,
}

impl FeatTrans {
    pub fn new(config: BaselineConfig, feature_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterSet::new();
        let net = QueryGnn::new(&config, feature_dim, &mut params, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self { config, net, params })
    }

    pub fn pretrain(&mut self, train: &[Task], valid: &[Task], rng: &mut ChaCha8Rng) -> Result<TrainReport> {
        let cfg = self.config.clone();
        let mut adam = Adam::new(cfg.lr);
        let mut report = TrainReport::default();
        let mut selection = Selection::new(cfg.valid_every);
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 1..=cfg.epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            for &i in &order {
                let task = &train[i];
                let mut labels = task.support.clone();
                labels.extend(sampled_targets(task, &cfg, rng));
                let labels = batch_of(labels, &cfg, rng);
                let (loss, grads) = self.net.loss(&self.params, task, &labels, Some(rng))?;
                adam.step(&mut self.params, &grads)?;
                total += loss;
            }
            report.epoch_loss.push(total / train.len().max(1) as f64);
            if selection.due(epoch, cfg.epochs, valid) {
                let f1 = evaluate_scorer(self, valid)?.f1;
                selection.offer(&mut report, epoch, f1, &self.params);
            }
        }
        selection.restore(&mut self.params);
        Ok(report)
    }

    /// One SGD step with rate `inner_lr` on the final layer, using the support loss.
    pub fn adapt(&self, task: &Task) -> Result<ParameterSet> {
        let (_, grads) = self.net.loss(&self.params, task, &task.support, None)?;
        let mut adapted = self.params.clone();
        sgd_step(&mut adapted, &grads, self.config.inner_lr, Some(&self.net.final_layer_params()))?;
        Ok(adapted)
    }
}

impl Scorer for FeatTrans {
    fn predict_task(&self, task: &Task) -> Result<Vec<Vec<f64>>> {
        let adapted = self.adapt(task)?;
        self.net.probabilities(&adapted, task, &queryset_queries(task))
    }

    fn threshold(&self) -> f64 {
        self.config.threshold
    }
}

/// `steps` plain gradient steps of rate `lr` on `loss`, starting from `params`.
pub fn inner_adapt<F>(params: &ParameterSet, mut loss: F, lr: f64, steps: usize) -> Result<ParameterSet>
where
    F: FnMut(&ParameterSet) -> Result<(f64, Gradients)>,
{
    let mut theta = params.clone();
    for _ in 0..steps {
        let (_, g) = loss(&theta)?;
        sgd_step(&mut theta, &g, lr, None)?;
    }
    Ok(theta)
}

/// Query loss after `steps` inner steps on the support loss, and its gradient with respect
/// to the initialization.
///
/// First order takes the query gradient at the adapted parameters. Second order multiplies it
/// by `∏ (I − lr H_k)` along the inner trajectory, with Hessian-vector products from central
/// differences of the support gradient, and is limited to two inner steps.
pub fn maml_meta_gradient<F, G>(
    params: &ParameterSet,
    mut support: F,
    mut query: G,
    lr: f64,
    steps: usize,
    second_order: bool,
) -> Result<(f64, Gradients)>
where
    F: FnMut(&ParameterSet) -> Result<(f64, Gradients)>,
    G: FnMut(&ParameterSet) -> Result<(f64, Gradients)>,
{
    if second_order && steps > 2 {
        return Err(Error::Config("second-order MAML is limited to at most 2 inner steps".into()));
    }
    let mut trajectory = Vec::with_capacity(steps);
    let mut theta = params.clone();
    for _ in 0..steps {
        let (_, g) = support(&theta)?;
        if second_order {
            trajectory.push(theta.clone());
        }
        sgd_step(&mut theta, &g, lr, None)?;
    }
    let (loss, mut v) = query(&theta)?;
    for point in trajectory.iter().rev() {
        let hv = hessian_vector(&mut support, point, &v)?;
        for (a, b) in v.0.iter_mut().zip(&hv.0) {
            a.scaled_add(-lr, b);
        }
    }
    Ok((loss, v))
}

fn hessian_vector<F>(grad: &mut F, at: &ParameterSet, v: &Gradients) -> Result<Gradients>
where
    F: FnMut(&ParameterSet) -> Result<(f64, Gradients)>,
{
    let norm = v.norm();
    if norm == 0.0 {
        return Ok(Gradients::zeros_like(at));
    }
    let eps = 1e-5 / norm;
    let mut up = at.clone();
    up.add_scaled(eps, v);
    let mut down = at.clone();
    down.add_scaled(-eps, v);
    let (_, mut g) = grad(&up)?;
    let (_, gd) = grad(&down)?;
    for (a, b) in g.0.iter_mut().zip(&gd.0) {
        *a -= b;
        *a /= 2.0 * eps;
    }
    Ok(g)
}

/// `θ + β · mean(θᵢ − θ)`.
pub fn reptile_update(theta: &ParameterSet, adapted: &[ParameterSet], beta: f64) -> Result<ParameterSet> {
    if adapted.is_empty() {
        return Err(Error::Input("reptile update needs at least one adapted model".into()));
    }
    let mut mean = Gradients::zeros_like(theta);
    for a in adapted {
        theta.check_compatible(a)?;
        mean.add_assign(&a.difference(theta));
    }
    mean.scale(1.0 / adapted.len() as f64);
    let mut out = theta.clone();
    out.add_scaled(beta, &mean);
    Ok(out)
}

/// Test-time adaptation shared by MAML and Reptile: `inner_steps_test` SGD steps on the
/// support loss.
fn adapt_on_support(net: &QueryGnn, params: &ParameterSet, cfg: &BaselineConfig, task: &Task) -> Result<ParameterSet> {
    inner_adapt(params, |p| net.loss(p, task, &task.support, None), cfg.inner_lr, cfg.inner_steps_test)
}

#[derive(Clone, Debug)]
pub struct Maml {
    pub config: BaselineConfig,
    pub net: QueryGnn,
    pub params: ParameterSet,
}

impl Maml {
    pub fn new(config: BaselineConfig, feature_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterSet::new();
        let net = QueryGnn::new(&config, feature_dim, &mut params, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self { config, net, params })
    }

    /// Support-set inner loop, query-set outer loss, one Adam step of rate β per task.
    pub fn meta_train(&mut self, train: &[Task], valid: &[Task], rng: &mut ChaCha8Rng) -> Result<TrainReport> {
        let cfg = self.config.clone();
        let mut adam = Adam::new(cfg.outer_lr);
        let mut report = TrainReport::default();
        let mut selection = Selection::new(cfg.valid_every);
        let mut order: Vec<usize> = (0..train.len()).collect();
        // Finite-difference Hessian products need a deterministic loss.
        let dropout = !cfg.second_order;
        for epoch in 1..=cfg.epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            for &i in &order {
                let task = &train[i];
                let targets = batch_of(sampled_targets(task, &cfg, rng), &cfg, rng);
                let mut r1 = child_rng(rng);
                let mut r2 = child_rng(rng);
                let net = &self.net;
                let (loss, grads) = maml_meta_gradient(
                    &self.params,
                    |p| net.loss(p, task, &task.support, dropout.then_some(&mut r1)),
                    |p| net.loss(p, task, &targets, dropout.then_some(&mut r2)),
                    cfg.inner_lr,
                    cfg.inner_steps_train,
                    cfg.second_order,
                )?;
                adam.step(&mut self.params, &grads)?;
                total += loss;
            }
            report.epoch_loss.push(total / train.len().max(1) as f64);
            if selection.due(epoch, cfg.epochs, valid) {
                let f1 = evaluate_scorer(self, valid)?.f1;
                selection.offer(&mut report, epoch, f1, &self.params);
            }
        }
        selection.restore(&mut self.params);
        Ok(report)
    }
}

impl Scorer for Maml {
    fn predict_task(&self, task: &Task) -> Result<Vec<Vec<f64>>> {
        let adapted = adapt_on_support(&self.net, &self.params, &self.config, task)?;
        self.net.probabilities(&adapted, task, &queryset_queries(task))
    }

    fn threshold(&self) -> f64 {
        self.config.threshold
    }
}

#[derive(Clone, Debug)]
pub struct Reptile {
    pub config: BaselineConfig,
    pub net: QueryGnn,
    pub params: ParameterSet,
}

impl Reptile {
    pub fn new(config: BaselineConfig, feature_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterSet::new();
        let net = QueryGnn::new(&config, feature_dim, &mut params, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self { config, net, params })
    }

    /// Inner SGD on all labels of a task (support and sampled query-set labels), then an outer
    /// step towards the adapted parameters, task by task.
    pub fn meta_train(&mut self, train: &[Task], valid: &[Task], rng: &mut ChaCha8Rng) -> Result<TrainReport> {
        let cfg = self.config.clone();
        let mut adam = Adam::new(cfg.outer_lr);
        let mut report = TrainReport::default();
        let mut selection = Selection::new(cfg.valid_every);
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 1..=cfg.epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            for &i in &order {
                let task = &train[i];
                let mut labels = task.support.clone();
                labels.extend(sampled_targets(task, &cfg, rng));
                labels.shuffle(rng);
                let batch = cfg.query_batch.unwrap_or(labels.len()).min(labels.len());
                let mut step = 0;
                let mut first_loss = None;
                let mut inner = child_rng(rng);
                let net = &self.net;
                let adapted = inner_adapt(
                    &self.params,
                    |p| {
                        let start = (step * batch) % labels.len();
                        step += 1;
                        let chunk: Vec<QueryLabels> =
                            (0..batch).map(|k| labels[(start + k) % labels.len()].clone()).collect();
                        let out = net.loss(p, task, &chunk, Some(&mut inner))?;
                        first_loss.get_or_insert(out.0);
                        Ok(out)
                    },
                    cfg.inner_lr,
                    cfg.inner_steps_train,
                )?;
                total += first_loss.unwrap_or(0.0);
                match cfg.reptile_outer {
                    OuterRule::Sgd => {
                        self.params = reptile_update(&self.params, std::slice::from_ref(&adapted), cfg.outer_lr)?;
                    }
                    OuterRule::Adam => {
                        let pseudo = self.params.difference(&adapted);
                        adam.step(&mut self.params, &pseudo)?;
                    }
                }
            }
            report.epoch_loss.push(total / train.len().max(1) as f64);
            if selection.due(epoch, cfg.epochs, valid) {
                let f1 = evaluate_scorer(self, valid)?.f1;
                selection.offer(&mut report, epoch, f1, &self.params);
            }
        }
        selection.restore(&mut self.params);
        Ok(report)
    }
}

impl Scorer for Reptile {
    fn predict_task(&self, task: &Task) -> Result<Vec<Vec<f64>>> {
        let adapted = adapt_on_support(&self.net, &self.params, &self.config, task)?;
        self.net.probabilities(&adapted, task, &queryset_queries(task))
    }

    fn threshold(&self) -> f64 {
        self.config.threshold
    }
}

/// Positive and negative class centroids of one query.
#[derive(Clone, Debug, PartialEq)]
pub struct Prototypes {
    pub positive: Array1<f64>,
    pub negative: Array1<f64>,
}

impl Prototypes {
    /// Mean embedding of the labelled positives and negatives.
    pub fn of(embedding: &Array2<f64>, labels: &QueryLabels) -> Result<Self> {
        if labels.positives.is_empty() || labels.negatives.is_empty() {
            return Err(Error::UnsupportedQuery(format!(
                "query {} has no labels to build prototypes from",
                labels.query
            )));
        }
        let mean = |rows: &[NodeId]| embedding.select(Axis(0), rows).mean_axis(Axis(0)).expect("nonempty");
        Ok(Self {
            positive: mean(&labels.positives),
            negative: mean(&labels.negatives),
        })
    }

    /// Two-class softmax over negated Euclidean distances: `[p(in), p(out)]` per row.
    pub fn class_probabilities(&self, embedding: &Array2<f64>) -> Vec<[f64; 2]> {
        embedding
            .rows()
            .into_iter()
            .map(|h| {
                let dp = (&h - &self.positive).mapv(|x| x * x).sum().sqrt();
                let dn = (&h - &self.negative).mapv(|x| x * x).sum().sqrt();
                let p = sigmoid(dn - dp);
                [p, sigmoid(dp - dn)]
            })
            .collect()
    }
}

/// Graph prototypical network: a GNN embedding without query identifier and per-query
/// prototypes from labelled samples.
#[derive(Clone, Debug)]
pub struct Gpn {
    pub config: BaselineConfig,
    stack: GnnStack,
    pub params: ParameterSet,
    feature_dim: usize,
    seed: u64,
}

impl Gpn {
    pub fn new(config: BaselineConfig, feature_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterSet::new();
        let specs = LayerSpec::stack(config.gnn, feature_dim, config.hidden, config.hidden, config.layers, config.dropout);
        let stack = GnnStack::new(&specs, &mut params, "gnn", &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self {
            config,
            stack,
            params,
            feature_dim,
            seed,
        })
    }

    fn embed_on(&self, tape: &mut Tape, bound: &Bound, task: &Task, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        check_features(task, self.feature_dim)?;
        self.stack
            .forward(tape, bound, task.ops(), NodeInput::Sparse(task.features.clone()), rng)
    }

    pub fn embed(&self, params: &ParameterSet, task: &Task) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let bound = bind(params, &mut tape);
        let h = self.embed_on(&mut tape, &bound, task, None)?;
        Ok(tape.value(h).clone())
    }

    /// `d(h_v, c⁻) − d(h_v, c⁺)` for every node, as an `n × 1` logit.
    fn logit(&self, tape: &mut Tape, h: Var, proto: &QueryLabels) -> Result<Var> {
        if proto.positives.is_empty() || proto.negatives.is_empty() {
            return Err(Error::UnsupportedQuery(format!(
                "query {} has no labels to build prototypes from",
                proto.query
            )));
        }
        let pos = tape.select_rows(h, &proto.positives);
        let cp = tape.mean_rows(pos);
        let neg = tape.select_rows(h, &proto.negatives);
        let cn = tape.mean_rows(neg);
        let dp = tape.row_dist(h, cp);
        let dn = tape.row_dist(h, cn);
        Ok(tape.sub(dn, dp))
    }

    /// Summed BCE of `scored` labels under prototypes from the paired `proto` labels.
    pub fn loss(
        &self,
        params: &ParameterSet,
        task: &Task,
        episodes: &[(QueryLabels, QueryLabels)],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Gradients)> {
        if episodes.is_empty() {
            return Err(Error::Input("no labelled queries".into()));
        }
        for (p, s) in episodes {
            check_labels(task, p)?;
            check_labels(task, s)?;
        }
        let mut tape = Tape::new();
        let bound = bind(params, &mut tape);
        let h = self.embed_on(&mut tape, &bound, task, rng)?;
        let mut total: Option<Var> = None;
        for (proto, scored) in episodes {
            let z = self.logit(&mut tape, h, proto)?;
            let entries = scored
                .positives
                .iter()
                .map(|&v| (v, 0, 1.0))
                .chain(scored.negatives.iter().map(|&v| (v, 0, 0.0)))
                .collect();
            let term = tape.bce_logits(z, entries);
            total = Some(match total {
                Some(t) => tape.add(t, term),
                None => term,
            });
        }
        let total = total.expect("nonempty episodes");
        Ok((tape.scalar(total), tape.gradients(total, params)))
    }

    /// Positive-class probability of every node for each labelled query.
    pub fn predict_with_labels(&self, task: &Task, labels: &[QueryLabels]) -> Result<Vec<Vec<f64>>> {
        let h = self.embed(&self.params, task)?;
        labels
            .iter()
            .map(|l| {
                check_labels(task, l)?;
                let proto = Prototypes::of(&h, l)?;
                Ok(proto.class_probabilities(&h).into_iter().map(|[p, _]| p).collect())
            })
            .collect()
    }

    /// Splits fresh samples of every query-set query into prototype labels and scored labels.
    fn training_episodes(&self, task: &Task, rng: &mut ChaCha8Rng) -> Vec<(QueryLabels, QueryLabels)> {
        let cfg = &self.config;
        let n = task.node_count();
        let mut episodes = Vec::new();
        for t in &task.queryset {
            let mut l = t.sample_labels(n, cfg.gpn_proto_pos + cfg.query_pos, cfg.gpn_proto_neg + cfg.query_neg, rng);
            l.positives.shuffle(rng);
            l.negatives.shuffle(rng);
            let kp = cfg.gpn_proto_pos.min(l.positives.len().saturating_sub(1));
            let kn = cfg.gpn_proto_neg.min(l.negatives.len().saturating_sub(1));
            if kp == 0 || kn == 0 {
                continue;
            }
            let proto = QueryLabels {
                query: t.query,
                positives: l.positives[..kp].to_vec(),
                negatives: l.negatives[..kn].to_vec(),
            };
            let scored = QueryLabels {
                query: t.query,
                positives: l.positives[kp..].to_vec(),
                negatives: l.negatives[kn..].to_vec(),
            };
            episodes.push((proto, scored));
        }
        episodes
    }

    pub fn meta_train(&mut self, train: &[Task], valid: &[Task], rng: &mut ChaCha8Rng) -> Result<TrainReport> {
        let cfg = self.config.clone();
        let mut adam = Adam::new(cfg.lr);
        let mut report = TrainReport::default();
        let mut selection = Selection::new(cfg.valid_every);
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 1..=cfg.epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            let mut used = 0;
            for &i in &order {
                let episodes = self.training_episodes(&train[i], rng);
                if episodes.is_empty() {
                    continue;
                }
                let (loss, grads) = self.loss(&self.params, &train[i], &episodes, Some(rng))?;
                adam.step(&mut self.params, &grads)?;
                total += loss;
                used += 1;
            }
            report.epoch_loss.push(total / used.max(1) as f64);
            if selection.due(epoch, cfg.epochs, valid) {
                let f1 = evaluate_scorer(self, valid)?.f1;
                selection.offer(&mut report, epoch, f1, &self.params);
            }
        }
        selection.restore(&mut self.params);
        Ok(report)
    }

    /// The sampled prototype labels GPN is granted for the query-set queries of `task`.
    pub fn granted_labels(&self, task: &Task) -> Vec<QueryLabels> {
        let mut rng = task_rng(self.seed, &task.id);
        let n = task.node_count();
        task.queryset
            .iter()
            .map(|t| t.sample_labels(n, self.config.gpn_proto_pos, self.config.gpn_proto_neg, &mut rng))
            .collect()
    }
}

impl Scorer for Gpn {
    fn predict_task(&self, task: &Task) -> Result<Vec<Vec<f64>>> {
        self.predict_with_labels(task, &self.granted_labels(task))
    }

    fn threshold(&self) -> f64 {
        self.config.threshold
    }
}
