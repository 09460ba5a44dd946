//! Episodic community-search tasks.
//!
//! A task is a graph (usually a BFS sample of a larger one), node features, a support set of
//! labelled queries and a query set whose queries carry their full community membership.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::graph::{bfs_subgraph, Graph, NodeId, StructuralFeatures};
use crate::nn::{hex, GraphOps, SparseMatrix};

/// Attempts per task before sampling gives up.
const MAX_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Single graph, shared communities.
    Sgsc,
    /// Single graph, disjoint communities.
    Sgdc,
    /// Multiple graphs, one domain.
    Mgod,
    /// Multiple graphs, different domains.
    Mgdd,
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgsc" => Ok(Scenario::Sgsc),
            "sgdc" => Ok(Scenario::Sgdc),
            "mgod" => Ok(Scenario::Mgod),
            "mgdd" => Ok(Scenario::Mgdd),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::Sgsc => "sgsc",
            Scenario::Sgdc => "sgdc",
            Scenario::Mgod => "mgod",
            Scenario::Mgdd => "mgdd",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Binary attributes followed by core number and clustering coefficient.
    AttrsStructural,
    /// Core number and clustering coefficient only.
    StructuralOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub shots: usize,
    pub query_count: usize,
    pub pos_per_query: usize,
    pub neg_per_query: usize,
    pub subgraph_size: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    /// `None` picks structural-only for cross-domain tasks and attribute-free graphs.
    pub feature_mode: Option<FeatureMode>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Sgsc,
            shots: 1,
            query_count: 30,
            pos_per_query: 5,
            neg_per_query: 10,
            subgraph_size: 200,
            n_train: 100,
            n_valid: 50,
            n_test: 50,
            feature_mode: None,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("shots", self.shots),
            ("query_count", self.query_count),
            ("pos_per_query", self.pos_per_query),
            ("subgraph_size", self.subgraph_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    fn feature_mode_for(&self, bundles: &[&DatasetBundle]) -> Result<FeatureMode> {
        let has_attrs = bundles.iter().all(|b| b.graph.attributes().is_some());
        match (self.feature_mode, self.scenario) {
            (Some(FeatureMode::AttrsStructural), Scenario::Mgdd) => Err(Error::Config(
                "cross-domain tasks cannot use attributes: vocabularies differ".into(),
            )),
            (Some(FeatureMode::AttrsStructural), _) if !has_attrs => Err(Error::Config(
                "attrs+structural features need node attributes".into(),
            )),
            (Some(mode), _) => Ok(mode),
            (None, Scenario::Mgdd) => Ok(FeatureMode::StructuralOnly),
            (None, _) if has_attrs => Ok(FeatureMode::AttrsStructural),
            (None, _) => Ok(FeatureMode::StructuralOnly),
        }
    }
}

/// A query node with sampled positive and negative labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryLabels {
    pub query: NodeId,
    pub positives: Vec<NodeId>,
    pub negatives: Vec<NodeId>,
}

/// A query node with its complete community membership (which contains the query).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTarget {
    pub query: NodeId,
    pub members: Vec<NodeId>,
}

impl QueryTarget {
    pub fn membership_vector(&self, n: usize) -> Vec<bool> {
        let mut v = vec![false; n];
        for &m in &self.members {
            v[m] = true;
        }
        v
    }

    /// Samples up to `pos` positives from the membership (excluding the query) and up to
    /// `neg` negatives from the remaining nodes, without replacement.
    pub fn sample_labels(&self, n: usize, pos: usize, neg: usize, rng: &mut impl Rng) -> QueryLabels {
        let inside = self.membership_vector(n);
        let candidates: Vec<NodeId> = self.members.iter().copied().filter(|&v| v != self.query).collect();
        let outside: Vec<NodeId> = (0..n).filter(|&v| !inside[v]).collect();
        QueryLabels {
            query: self.query,
            positives: choose_sorted(&candidates, pos, rng),
            negatives: choose_sorted(&outside, neg, rng),
        }
    }

    /// Every labelled node: all members positive, all other nodes negative.
    pub fn full_labels(&self, n: usize) -> QueryLabels {
        let inside = self.membership_vector(n);
        QueryLabels {
            query: self.query,
            positives: self.members.iter().copied().filter(|&v| v != self.query).collect(),
            negatives: (0..n).filter(|&v| !inside[v]).collect(),
        }
    }
}

fn choose_sorted(pool: &[NodeId], k: usize, rng: &mut impl Rng) -> Vec<NodeId> {
    let mut picked: Vec<NodeId> = pool.choose_multiple(rng, k.min(pool.len())).copied().collect();
    picked.sort_unstable();
    picked
}

/// One episode.
#[derive(Debug)]
pub struct Task {
    pub id: String,
    pub graph: Graph,
    pub features: Arc<SparseMatrix>,
    pub support: Vec<QueryLabels>,
    pub queryset: Vec<QueryTarget>,
    /// Full membership of the support queries when known. Only label regeneration reads it.
    support_truth: Vec<QueryTarget>,
    ops: OnceLock<GraphOps>,
}

impl Clone for Task {
    fn clone(&self) -> Self {
        Self {
            id: self.id.clone(),
            graph: self.graph.clone(),
            features: Arc::clone(&self.features),
            support: self.support.clone(),
            queryset: self.queryset.clone(),
            support_truth: self.support_truth.clone(),
            ops: self.ops.clone(),
        }
    }
}

impl PartialEq for Task {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.graph == other.graph
            && self.features == other.features
            && self.support == other.support
            && self.queryset == other.queryset
            && self.support_truth == other.support_truth
    }
}

impl Task {
    pub fn new(
        id: impl Into<String>,
        graph: Graph,
        features: SparseMatrix,
        support: Vec<QueryLabels>,
        queryset: Vec<QueryTarget>,
    ) -> Result<Self> {
        let n = graph.node_count();
        if features.rows() != n {
            return Err(Error::Shape(format!(
                "{} feature rows for {n} nodes",
                features.rows()
            )));
        }
        let mut seen = BTreeSet::new();
        for q in support.iter().map(|s| s.query).chain(queryset.iter().map(|t| t.query)) {
            if q >= n {
                return Err(Error::Input(format!("query {q} outside the task graph")));
            }
            if !seen.insert(q) {
                return Err(Error::Input(format!("query {q} appears twice in one task")));
            }
        }
        for s in &support {
            let pos: BTreeSet<_> = s.positives.iter().collect();
            if s.positives.iter().chain(&s.negatives).any(|&v| v >= n)
                || s.negatives.iter().any(|v| pos.contains(v))
                || pos.contains(&s.query)
            {
                return Err(Error::Input(format!("inconsistent labels for query {}", s.query)));
            }
        }
        for t in &queryset {
            if !t.members.contains(&t.query) || t.members.iter().any(|&v| v >= n) {
                return Err(Error::Input(format!("invalid membership for query {}", t.query)));
            }
        }
        Ok(Self {
            id: id.into(),
            graph,
            features: Arc::new(features),
            support,
            queryset,
            support_truth: Vec::new(),
            ops: OnceLock::new(),
        })
    }

    /// Attaches the full membership of every support query, in support order.
    pub fn with_support_truth(mut self, truth: Vec<QueryTarget>) -> Result<Self> {
        let same_queries = truth.len() == self.support.len()
            && truth.iter().zip(&self.support).all(|(t, s)| t.query == s.query);
        if !same_queries {
            return Err(Error::Input("support truth does not match the support queries".into()));
        }
        let n = self.node_count();
        for t in &truth {
            if !t.members.contains(&t.query) || t.members.iter().any(|&v| v >= n) {
                return Err(Error::Input(format!("invalid membership for query {}", t.query)));
            }
        }
        self.support_truth = truth;
        Ok(self)
    }

    /// Full membership of the support queries (empty when unknown).
    pub fn support_truth(&self) -> &[QueryTarget] {
        &self.support_truth
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Propagation matrices, computed on first use.
    pub fn ops(&self) -> &GraphOps {
        self.ops.get_or_init(|| GraphOps::new(&self.graph))
    }

    /// Same task with a different support set.
    pub fn with_support(&self, support: Vec<QueryLabels>) -> Result<Self> {
        let mut t = Task::new(
            self.id.clone(),
            self.graph.clone(),
            (*self.features).clone(),
            support,
            self.queryset.clone(),
        )?;
        t.ops = self.ops.clone();
        if self.support_truth.iter().map(|s| s.query).eq(t.support.iter().map(|s| s.query)) {
            t.support_truth = self.support_truth.clone();
        }
        Ok(t)
    }

    fn to_file(&self) -> TaskFile {
        TaskFile {
            id: self.id.clone(),
            node_count: self.graph.node_count(),
            edges: self.graph.edges().collect(),
            node_labels: self.graph.node_labels().map(<[u64]>::to_vec),
            features: (*self.features).clone(),
            support: self.support.clone(),
            queryset: self.queryset.clone(),
            support_truth: self.support_truth.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: TaskFile = serde_json::from_str(text)?;
        let mut graph = Graph::build(f.node_count, f.edges, None)?;
        if let Some(labels) = f.node_labels {
            graph = graph.with_node_labels(labels)?;
        }
        Task::new(f.id, graph, f.features, f.support, f.queryset)?.with_support_truth_if_any(f.support_truth)
    }

    fn with_support_truth_if_any(self, truth: Vec<QueryTarget>) -> Result<Self> {
        if truth.is_empty() {
            Ok(self)
        } else {
            self.with_support_truth(truth)
        }
    }

    /// Hex SHA-256 of the serialized task.
    pub fn digest(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_json()?.as_bytes())))
    }
}

#[derive(Serialize, Deserialize)]
struct TaskFile {
    id: String,
    node_count: usize,
    edges: Vec<(NodeId, NodeId)>,
    node_labels: Option<Vec<u64>>,
    features: SparseMatrix,
    support: Vec<QueryLabels>,
    queryset: Vec<QueryTarget>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    support_truth: Vec<QueryTarget>,
}

/// Rows `[attributes ‖ core number ‖ clustering]` (or the last two only), padded to `dim`
/// attribute columns when given.
pub fn assemble_base_features(g: &Graph, mode: FeatureMode, attr_dim: Option<usize>) -> Result<SparseMatrix> {
    let s = StructuralFeatures::of(g);
    let (attrs, width) = match mode {
        FeatureMode::StructuralOnly => (None, 0),
        FeatureMode::AttrsStructural => {
            let a = g.attributes().ok_or_else(|| {
                Error::Config("attrs+structural features need node attributes".into())
            })?;
            let width = attr_dim.unwrap_or(a.dim());
            if width < a.dim() {
                return Err(Error::Shape(format!(
                    "attribute width {width} below the graph's {}",
                    a.dim()
                )));
            }
            (Some(a), width)
        }
    };
    let rows: Vec<Vec<(usize, f64)>> = (0..g.node_count())
        .map(|v| {
            let mut row: Vec<(usize, f64)> = attrs
                .map(|a| a.row(v).iter().map(|&i| (i as usize, 1.0)).collect())
                .unwrap_or_default();
            row.push((width, s.core_number[v] as f64));
            row.push((width + 1, s.local_clustering[v]));
            row.retain(|&(_, x)| x != 0.0);
            row
        })
        .collect();
    SparseMatrix::from_rows(width + 2, &rows)
}

/// Per-node community memberships of `bundle` restricted to `allowed` communities.
fn memberships(bundle: &DatasetBundle, allowed: Option<&[bool]>) -> Vec<Vec<usize>> {
    (0..bundle.graph.node_count())
        .map(|v| {
            bundle
                .communities
                .membership(v)
                .iter()
                .copied()
                .filter(|&c| allowed.is_none_or(|a| a[c]))
                .collect()
        })
        .collect()
}

/// Samples one task from a BFS subgraph of `bundle`.
pub fn sample_task(bundle: &DatasetBundle, cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Task> {
    let mode = cfg.feature_mode_for(&[bundle])?;
    let attr_dim = bundle.graph.attributes().map(|a| a.dim());
    sample_restricted(bundle, cfg, mode, attr_dim, None, "task", rng)
}

fn sample_restricted(
    bundle: &DatasetBundle,
    cfg: &ScenarioConfig,
    mode: FeatureMode,
    attr_dim: Option<usize>,
    allowed: Option<&[bool]>,
    id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Task> {
    cfg.validate()?;
    let member = memberships(bundle, allowed);
    let seeds: Vec<NodeId> = (0..bundle.graph.node_count())
        .filter(|&v| !member[v].is_empty())
        .collect();
    let &seed = seeds
        .choose(rng)
        .ok_or_else(|| Error::Sampling("no node belongs to an eligible community".into()))?;
    let sub = bfs_subgraph(&bundle.graph, seed, cfg.subgraph_size);
    let parent: Vec<NodeId> = (0..sub.node_count()).map(|i| sub.label_of(i) as NodeId).collect();
    let local_member: Vec<&[usize]> = parent.iter().map(|&p| member[p].as_slice()).collect();
    let features = assemble_base_features(&sub, mode, attr_dim)?;
    // queries are picked among eligible nodes; their membership uses every community
    let full: Vec<&[usize]> = parent.iter().map(|&p| bundle.communities.membership(p)).collect();
    build_task(id, sub, features, &local_member, &full, cfg, rng)
}

/// Picks support and query-set queries on a prepared graph.
///
/// `eligible[v]` lists the communities that make `v` a query candidate; `full[v]` lists all
/// communities of `v` and defines memberships.
fn build_task(
    id: &str,
    graph: Graph,
    features: SparseMatrix,
    eligible: &[&[usize]],
    full: &[&[usize]],
    cfg: &ScenarioConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Task> {
    let n = graph.node_count();
    let community_of = |v: NodeId| -> Vec<NodeId> {
        let cs = full[v];
        (0..n).filter(|&u| full[u].iter().any(|c| cs.contains(c))).collect()
    };
    let candidates: Vec<NodeId> = (0..n)
        .filter(|&v| !eligible[v].is_empty() && full[v].iter().any(|c| (0..n).any(|u| u != v && full[u].contains(c))))
        .collect();

    let (support_pool, query_pool): (Vec<NodeId>, Vec<NodeId>) = if cfg.scenario == Scenario::Sgdc {
        let mut present: Vec<usize> = candidates
            .iter()
            .flat_map(|&v| eligible[v].iter().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if present.len() < 2 {
            return Err(Error::Sampling(
                "disjoint-community tasks need two communities in the subgraph".into(),
            ));
        }
        present.shuffle(rng);
        let support_side: BTreeSet<usize> = present[..present.len() / 2].iter().copied().collect();
        let inside = |v: &NodeId| full[*v].iter().all(|c| support_side.contains(c));
        let outside = |v: &NodeId| full[*v].iter().all(|c| !support_side.contains(c));
        (
            candidates.iter().copied().filter(inside).collect(),
            candidates.iter().copied().filter(outside).collect(),
        )
    } else {
        (candidates.clone(), candidates)
    };

    let mut support_pool = support_pool;
    support_pool.shuffle(rng);
    if support_pool.len() < cfg.shots {
        return Err(Error::Sampling(format!(
            "{} support candidates for {} shots",
            support_pool.len(),
            cfg.shots
        )));
    }
    let support_queries: Vec<NodeId> = support_pool[..cfg.shots].to_vec();
    let mut query_pool: Vec<NodeId> = query_pool
        .into_iter()
        .filter(|v| !support_queries.contains(v))
        .collect();
    query_pool.shuffle(rng);
    if query_pool.len() < cfg.query_count {
        return Err(Error::Sampling(format!(
            "{} query-set candidates for {} queries",
            query_pool.len(),
            cfg.query_count
        )));
    }

    let support_truth: Vec<QueryTarget> = support_queries
        .iter()
        .map(|&q| QueryTarget {
            query: q,
            members: community_of(q),
        })
        .collect();
    let support = support_truth
        .iter()
        .map(|t| t.sample_labels(n, cfg.pos_per_query, cfg.neg_per_query, rng))
        .collect();
    let queryset = query_pool[..cfg.query_count]
        .iter()
        .map(|&q| QueryTarget {
            query: q,
            members: community_of(q),
        })
        .collect();
    Task::new(id, graph, features, support, queryset)?.with_support_truth(support_truth)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSet {
    pub train: Vec<Task>,
    pub valid: Vec<Task>,
    pub test: Vec<Task>,
}

impl TaskSet {
    pub fn splits(&self) -> [(&'static str, &[Task]); 3] {
        [("train", &self.train), ("valid", &self.valid), ("test", &self.test)]
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `train/`, `valid/` and `test/` directories of per-task JSON files.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for (name, tasks) in self.splits() {
            let sub = dir.join(name);
            if sub.exists() {
                fs::remove_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            }
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for (i, t) in tasks.iter().enumerate() {
                let path = sub.join(format!("{i:04}.json"));
                fs::write(&path, t.to_json()?).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read_split = |name: &str| -> Result<Vec<Task>> {
            let sub = dir.join(name);
            let mut paths: Vec<_> = fs::read_dir(&sub)
                .map_err(|e| Error::io(&sub, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "json"))
                .collect();
            paths.sort();
            paths
                .iter()
                .map(|p| Task::from_json(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?))
                .collect()
        };
        Ok(Self {
            train: read_split("train")?,
            valid: read_split("valid")?,
            test: read_split("test")?,
        })
    }

    /// Digest over every task digest, in split order.
    pub fn digest(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (_, tasks) in self.splits() {
            for t in tasks {
                h.update(t.digest()?.as_bytes());
            }
        }
        Ok(hex(&h.finalize()))
    }
}

fn sample_many(
    bundle: &DatasetBundle,
    cfg: &ScenarioConfig,
    mode: FeatureMode,
    attr_dim: Option<usize>,
    allowed: Option<&[bool]>,
    prefix: &str,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Task>> {
    (0..count)
        .map(|i| {
            let id = format!("{prefix}-{i:04}");
            let mut last = None;
            for _ in 0..MAX_ATTEMPTS {
                match sample_restricted(bundle, cfg, mode, attr_dim, allowed, &id, rng) {
                    Ok(t) => return Ok(t),
                    Err(e @ Error::Sampling(_)) => last = Some(e),
                    Err(e) => return Err(e),
                }
            }
            Err(last.expect("at least one attempt"))
        })
        .collect()
}

/// Builds train/valid/test tasks for the configured scenario.
///
/// - SGSC: all splits sampled from `bundles[0]`.
/// - SGDC: the communities of `bundles[0]` are split into a training group and a held-out
///   group; training queries come from the first, valid/test queries from the second.
/// - MGOD: every bundle is one whole-graph task; bundles are split 60/20/20.
/// - MGDD: training tasks from `bundles[0]`, valid/test tasks from `bundles[1]`.
pub fn build_scenario_taskset(bundles: &[DatasetBundle], cfg: &ScenarioConfig) -> Result<TaskSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match cfg.scenario {
        Scenario::Sgsc | Scenario::Sgdc => {
            let bundle = bundles
                .first()
                .ok_or_else(|| Error::Config("single-graph scenarios need one dataset".into()))?;
            let mode = cfg.feature_mode_for(&[bundle])?;
            let attr_dim = bundle.graph.attributes().map(|a| a.dim());
            let (train_allowed, held_allowed) = if cfg.scenario == Scenario::Sgdc {
                let (a, b) = split_communities(bundle.communities.len(), &mut rng)?;
                (Some(a), Some(b))
            } else {
                (None, None)
            };
            let train = sample_many(bundle, cfg, mode, attr_dim, train_allowed.as_deref(), "train", cfg.n_train, &mut rng)?;
            let valid = sample_many(bundle, cfg, mode, attr_dim, held_allowed.as_deref(), "valid", cfg.n_valid, &mut rng)?;
            let test = sample_many(bundle, cfg, mode, attr_dim, held_allowed.as_deref(), "test", cfg.n_test, &mut rng)?;
            Ok(TaskSet { train, valid, test })
        }
        Scenario::Mgdd => {
            if bundles.len() < 2 {
                return Err(Error::Config("cross-domain tasks need a source and a target dataset".into()));
            }
            let (source, target) = (&bundles[0], &bundles[1]);
            let mode = cfg.feature_mode_for(&[source, target])?;
            let train = sample_many(source, cfg, mode, None, None, "train", cfg.n_train, &mut rng)?;
            let valid = sample_many(target, cfg, mode, None, None, "valid", cfg.n_valid, &mut rng)?;
            let test = sample_many(target, cfg, mode, None, None, "test", cfg.n_test, &mut rng)?;
            Ok(TaskSet { train, valid, test })
        }
        Scenario::Mgod => {
            if bundles.len() < 3 {
                return Err(Error::Config(format!(
                    "multi-graph tasks need at least 3 graphs, got {}",
                    bundles.len()
                )));
            }
            let refs: Vec<&DatasetBundle> = bundles.iter().collect();
            let mode = cfg.feature_mode_for(&refs)?;
            let attr_dim = bundles
                .iter()
                .filter_map(|b| b.graph.attributes().map(|a| a.dim()))
                .max();
            let mut order: Vec<usize> = (0..bundles.len()).collect();
            order.shuffle(&mut rng);
            let n = bundles.len();
            let n_valid = ((n as f64 * 0.2).round() as usize).max(1);
            let n_train = n - 2 * n_valid;
            let mut tasks = Vec::with_capacity(n);
            for (rank, &b) in order.iter().enumerate() {
                let split = if rank < n_train {
                    "train"
                } else if rank < n_train + n_valid {
                    "valid"
                } else {
                    "test"
                };
                tasks.push(whole_graph_task(&bundles[b], cfg, mode, attr_dim, &format!("{split}-{}", bundles[b].name), &mut rng)?);
            }
            let test = tasks.split_off(n_train + n_valid);
            let valid = tasks.split_off(n_train);
            Ok(TaskSet { train: tasks, valid, test })
        }
    }
}

/// Randomly splits community indices into a training half and a held-out half.
fn split_communities(count: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<bool>, Vec<bool>)> {
    if count < 4 {
        return Err(Error::Config(format!(
            "disjoint-community tasks need at least 4 communities, got {count}"
        )));
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(rng);
    let mut train = vec![false; count];
    for &c in &order[..count.div_ceil(2)] {
        train[c] = true;
    }
    let held = train.iter().map(|t| !t).collect();
    Ok((train, held))
}

/// A task over a whole graph. The query set shrinks to the available candidates when the
/// graph is too small for `query_count`.
fn whole_graph_task(
    bundle: &DatasetBundle,
    cfg: &ScenarioConfig,
    mode: FeatureMode,
    attr_dim: Option<usize>,
    id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Task> {
    let g = &bundle.graph;
    let graph = match (g.attributes(), attr_dim) {
        (Some(a), Some(d)) if a.dim() < d => g.clone().with_attributes(Some(a.widened(d)))?,
        _ => g.clone(),
    };
    let features = assemble_base_features(&graph, mode, attr_dim)?;
    let member: Vec<&[usize]> = (0..g.node_count()).map(|v| bundle.communities.membership(v)).collect();
    let candidates = (0..g.node_count())
        .filter(|&v| !member[v].is_empty() && bundle.communities.union_of(v).len() > 1)
        .count();
    let mut local = cfg.clone();
    local.scenario = Scenario::Sgsc;
    local.query_count = cfg.query_count.min(candidates.saturating_sub(cfg.shots)).max(1);
    build_task(id, graph, features, &member, &member, &local, rng)
}
