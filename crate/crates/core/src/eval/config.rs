use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, BaselineKind};
use crate::cgnp::{CgnpConfig, DecoderKind};
use crate::dataset::{
    generate_sbm, load_attributes, load_citation, load_communities, load_edge_list,
    load_ego_networks, DatasetBundle,
};
use crate::error::{Error, Result};
use crate::nn::config_hash;
use crate::task::{build_scenario_taskset, ScenarioConfig, TaskSet};

/// Every model the harness can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelName {
    #[serde(rename = "cgnp-ip")]
    CgnpIp,
    #[serde(rename = "cgnp-mlp")]
    CgnpMlp,
    #[serde(rename = "cgnp-gnn")]
    CgnpGnn,
    #[serde(rename = "supervised")]
    Supervised,
    #[serde(rename = "feattrans")]
    FeatTrans,
    #[serde(rename = "maml")]
    Maml,
    #[serde(rename = "reptile")]
    Reptile,
    #[serde(rename = "gpn")]
    Gpn,
    #[serde(rename = "ctc")]
    Ctc,
    #[serde(rename = "kcore")]
    Kcore,
}

impl ModelName {
    pub const ALL: [ModelName; 10] = [
        ModelName::CgnpIp,
        ModelName::CgnpMlp,
        ModelName::CgnpGnn,
        ModelName::Supervised,
        ModelName::FeatTrans,
        ModelName::Maml,
        ModelName::Reptile,
        ModelName::Gpn,
        ModelName::Ctc,
        ModelName::Kcore,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::CgnpIp => "cgnp-ip",
            ModelName::CgnpMlp => "cgnp-mlp",
            ModelName::CgnpGnn => "cgnp-gnn",
            ModelName::Supervised => "supervised",
            ModelName::FeatTrans => "feattrans",
            ModelName::Maml => "maml",
            ModelName::Reptile => "reptile",
            ModelName::Gpn => "gpn",
            ModelName::Ctc => "ctc",
            ModelName::Kcore => "kcore",
        }
    }

    /// Decoder of a CGNP variant.
    pub fn decoder(self) -> Option<DecoderKind> {
        match self {
            ModelName::CgnpIp => Some(DecoderKind::Ip),
            ModelName::CgnpMlp => Some(DecoderKind::Mlp),
            ModelName::CgnpGnn => Some(DecoderKind::Gnn),
            _ => None,
        }
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            ModelName::Supervised => Some(BaselineKind::Supervised),
            ModelName::FeatTrans => Some(BaselineKind::FeatTrans),
            ModelName::Maml => Some(BaselineKind::Maml),
            ModelName::Reptile => Some(BaselineKind::Reptile),
            ModelName::Gpn => Some(BaselineKind::Gpn),
            _ => None,
        }
    }

    /// Graph algorithms have nothing to train.
    pub fn is_algorithmic(self) -> bool {
        matches!(self, ModelName::Ctc | ModelName::Kcore)
    }
}

impl std::str::FromStr for ModelName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        ModelName::ALL
            .into_iter()
            .find(|m| m.as_str() == lower)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}")))
    }
}

impl std::fmt::Display for ModelName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a dataset comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// `<dir>/<name>.edges`, `<name>.labels` and optionally `<name>.attrs`.
    Citation { dir: PathBuf, name: String },
    /// Explicit edge list, community file and optional attribute file.
    Files {
        name: String,
        edges: PathBuf,
        communities: PathBuf,
        #[serde(default)]
        attributes: Option<PathBuf>,
    },
    /// A directory of ego networks, one bundle per ego.
    Ego { dir: PathBuf },
    /// Planted partition with the given block sizes.
    Sbm {
        blocks: Vec<usize>,
        p_in: f64,
        p_out: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Vec<DatasetBundle>> {
        match self {
            DatasetSpec::Citation { dir, name } => Ok(vec![load_citation(dir, name)?]),
            DatasetSpec::Files {
                name,
                edges,
                communities,
                attributes,
            } => {
                let mut graph = load_edge_list(edges)?;
                if let Some(path) = attributes {
                    let attrs = load_attributes(path, &graph)?;
                    graph = graph.with_attributes(Some(attrs))?;
                }
                let communities = load_communities(communities, &graph)?;
                Ok(vec![DatasetBundle::new(name.clone(), graph, communities)?])
            }
            DatasetSpec::Ego { dir } => load_ego_networks(dir),
            DatasetSpec::Sbm {
                blocks,
                p_in,
                p_out,
                seed,
            } => Ok(vec![generate_sbm(blocks, *p_in, *p_out, *seed)?]),
        }
    }

    fn paths(&self) -> Vec<&Path> {
        match self {
            DatasetSpec::Citation { dir, .. } | DatasetSpec::Ego { dir } => vec![dir.as_path()],
            DatasetSpec::Files {
                edges,
                communities,
                attributes,
                ..
            } => {
                let mut p = vec![edges.as_path(), communities.as_path()];
                p.extend(attributes.as_deref());
                p
            }
            DatasetSpec::Sbm { .. } => Vec::new(),
        }
    }
}

/// Ground-truth ratio sweep settings. Each ratio is a `(positive %, negative %)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub ratios: Vec<(f64, f64)>,
    pub models: Vec<ModelName>,
    pub negative_pool: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ratios: vec![(2.0, 10.0), (5.0, 25.0), (10.0, 50.0), (15.0, 75.0), (20.0, 100.0)],
            models: vec![ModelName::CgnpGnn, ModelName::Supervised, ModelName::Gpn],
            negative_pool: 50,
        }
    }
}

/// One experiment: data, task construction, model and its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_model")]
    pub model: ModelName,
    /// Master seed for initialization and training.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Directory of serialized tasks; when set, `datasets` is not read.
    #[serde(default)]
    pub tasks: Option<PathBuf>,
    #[serde(default)]
    pub datasets: Vec<DatasetSpec>,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub cgnp: CgnpConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_model() -> ModelName {
    ModelName::CgnpGnn
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: default_model(),
            seed: 0,
            out: default_out(),
            tasks: None,
            datasets: Vec::new(),
            scenario: ScenarioConfig::default(),
            cgnp: CgnpConfig::default(),
            baseline: BaselineConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sets the master seed and the task sampling seed together.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.scenario.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.cgnp.validate()?;
        self.baseline.validate()?;
        if self.sweep.negative_pool == 0 {
            return Err(Error::Config("sweep.negative_pool must be positive".into()));
        }
        if let Some(w) = self.sweep.ratios.windows(2).find(|w| w[0].0 > w[1].0 || w[0].1 > w[1].1) {
            return Err(Error::Config(format!("sweep ratios out of order at {:?}", w[1])));
        }
        Ok(())
    }

    /// Fails when a referenced file or directory is missing.
    pub fn check_paths(&self) -> Result<()> {
        let mut paths: Vec<&Path> = self.datasets.iter().flat_map(DatasetSpec::paths).collect();
        if let Some(t) = &self.tasks {
            paths = vec![t.as_path()];
        }
        match paths.into_iter().find(|p| !p.exists()) {
            Some(p) => Err(Error::Input(format!("{} does not exist", p.display()))),
            None => Ok(()),
        }
    }

    /// Hash of everything that determines results (the output directory excluded).
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.out = PathBuf::new();
        config_hash(&c)
    }

    /// Model-specific CGNP settings: the decoder follows the model name.
    pub fn cgnp_config(&self, model: ModelName) -> Option<CgnpConfig> {
        model.decoder().map(|decoder| CgnpConfig {
            decoder,
            ..self.cgnp.clone()
        })
    }
}

pub fn load_datasets(specs: &[DatasetSpec]) -> Result<Vec<DatasetBundle>> {
    let mut out = Vec::new();
    for s in specs {
        out.extend(s.load()?);
    }
    Ok(out)
}

/// Loads the serialized task set, or builds it from the datasets.
pub fn prepare_tasks(cfg: &ExperimentConfig) -> Result<TaskSet> {
    cfg.check_paths()?;
    if let Some(dir) = &cfg.tasks {
        return TaskSet::load(dir);
    }
    if cfg.datasets.is_empty() {
        return Err(Error::Config("no datasets and no task directory configured".into()));
    }
    build_scenario_taskset(&load_datasets(&cfg.datasets)?, &cfg.scenario)
}
