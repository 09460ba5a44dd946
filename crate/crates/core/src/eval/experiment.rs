use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{prepare_tasks, ExperimentConfig, ModelName};
use super::{score_tasks, Metrics, QueryOutcome, Scorer};
use crate::algo::{AlgoMethod, AlgoScorer};
use crate::baselines::{task_rng, BaselineConfig, FeatTrans, Gpn, Maml, Reptile, Supervised};
use crate::cgnp::{meta_train, Cgnp, CgnpConfig, TrainReport};
use crate::error::{Error, Result};
use crate::nn::{load_checkpoint, save_checkpoint, ParameterSet};
use crate::task::{Task, TaskSet};

/// A model ready to score tasks.
#[derive(Clone, Debug)]
pub enum Fitted {
    Cgnp { model: Cgnp, params: ParameterSet },
    Supervised(Supervised),
    FeatTrans(FeatTrans),
    Maml(Maml),
    Reptile(Reptile),
    Gpn(Gpn),
    Algo(AlgoScorer),
}

impl Fitted {
    /// Untrained model of the configured kind.
    pub fn new(cfg: &ExperimentConfig, name: ModelName, feature_dim: usize) -> Result<Self> {
        let b = cfg.baseline.clone();
        let seed = cfg.seed;
        Ok(match name {
            ModelName::CgnpIp | ModelName::CgnpMlp | ModelName::CgnpGnn => {
                let c = cfg.cgnp_config(name).expect("cgnp variant");
                let (model, params) = Cgnp::new(c, feature_dim, seed)?;
                Fitted::Cgnp { model, params }
            }
            ModelName::Supervised => Fitted::Supervised(Supervised::new(b, feature_dim, seed)?),
            ModelName::FeatTrans => Fitted::FeatTrans(FeatTrans::new(b, feature_dim, seed)?),
            ModelName::Maml => Fitted::Maml(Maml::new(b, feature_dim, seed)?),
            ModelName::Reptile => Fitted::Reptile(Reptile::new(b, feature_dim, seed)?),
            ModelName::Gpn => Fitted::Gpn(Gpn::new(b, feature_dim, seed)?),
            ModelName::Ctc => Fitted::Algo(AlgoScorer(AlgoMethod::Ctc)),
            ModelName::Kcore => Fitted::Algo(AlgoScorer(AlgoMethod::Kcore)),
        })
    }

    pub fn scorer(&self) -> Box<dyn Scorer + '_> {
        match self {
            Fitted::Cgnp { model, params } => Box::new(model.scorer(params)),
            Fitted::Supervised(m) => Box::new(m.clone()),
            Fitted::FeatTrans(m) => Box::new(RefScorer(m)),
            Fitted::Maml(m) => Box::new(RefScorer(m)),
            Fitted::Reptile(m) => Box::new(RefScorer(m)),
            Fitted::Gpn(m) => Box::new(RefScorer(m)),
            Fitted::Algo(a) => Box::new(*a),
        }
    }

    /// Meta-learned parameters, if the model has any.
    pub fn params(&self) -> Option<&ParameterSet> {
        match self {
            Fitted::Cgnp { params, .. } => Some(params),
            Fitted::FeatTrans(m) => Some(&m.params),
            Fitted::Maml(m) => Some(&m.params),
            Fitted::Reptile(m) => Some(&m.params),
            Fitted::Gpn(m) => Some(&m.params),
            Fitted::Supervised(_) | Fitted::Algo(_) => None,
        }
    }

    fn params_mut(&mut self) -> Option<&mut ParameterSet> {
        match self {
            Fitted::Cgnp { params, .. } => Some(params),
            Fitted::FeatTrans(m) => Some(&mut m.params),
            Fitted::Maml(m) => Some(&mut m.params),
            Fitted::Reptile(m) => Some(&mut m.params),
            Fitted::Gpn(m) => Some(&mut m.params),
            Fitted::Supervised(_) | Fitted::Algo(_) => None,
        }
    }

    /// Trains on the training tasks, selecting on the validation tasks.
    pub fn train(&mut self, train: &[Task], valid: &[Task], rng: &mut ChaCha8Rng) -> Result<Option<TrainReport>> {
        Ok(match self {
            Fitted::Cgnp { model, params } => Some(meta_train(model, params, train, valid, rng)?),
            Fitted::FeatTrans(m) => Some(m.pretrain(train, valid, rng)?),
            Fitted::Maml(m) => Some(m.meta_train(train, valid, rng)?),
            Fitted::Reptile(m) => Some(m.meta_train(train, valid, rng)?),
            Fitted::Gpn(m) => Some(m.meta_train(train, valid, rng)?),
            Fitted::Supervised(_) | Fitted::Algo(_) => None,
        })
    }
}

struct RefScorer<'a, S>(&'a S);

impl<S: Scorer> Scorer for RefScorer<'_, S> {
    fn predict_task(&self, task: &Task) -> Result<Vec<Vec<f64>>> {
        self.0.predict_task(task)
    }

    fn threshold(&self) -> f64 {
        self.0.threshold()
    }
}

fn feature_dim(tasks: &TaskSet) -> Result<usize> {
    tasks
        .train
        .iter()
        .chain(&tasks.test)
        .chain(&tasks.valid)
        .map(Task::feature_dim)
        .next()
        .ok_or_else(|| Error::Input("empty task set".into()))
}

/// Outcome of training one model.
#[derive(Clone, Debug)]
pub struct Training {
    pub model: ModelName,
    pub fitted: Fitted,
    pub report: Option<TrainReport>,
    pub seconds: f64,
}

pub fn train_model(cfg: &ExperimentConfig, model: ModelName, tasks: &TaskSet) -> Result<Training> {
    let mut fitted = Fitted::new(cfg, model, feature_dim(tasks)?)?;
    let mut rng = task_rng(cfg.seed, "train");
    let start = Instant::now();
    let report = fitted.train(&tasks.train, &tasks.valid, &mut rng)?;
    let seconds = if model.is_algorithmic() {
        0.0
    } else {
        start.elapsed().as_secs_f64()
    };
    Ok(Training {
        model,
        fitted,
        report,
        seconds,
    })
}

/// File stem shared by every output of one run.
pub fn run_stem(cfg: &ExperimentConfig, model: ModelName) -> String {
    format!("{model}_{}_{}shot", cfg.scenario.scenario, cfg.scenario.shots)
}

/// Writes the trained parameters of `training`, tagged with the model name. Models without
/// meta-learned parameters write nothing.
pub fn save_training(cfg: &ExperimentConfig, training: &Training, dir: &Path) -> Result<Option<PathBuf>> {
    let Some(params) = training.fitted.params() else {
        return Ok(None);
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("{}.ckpt", run_stem(cfg, training.model)));
    match &training.fitted {
        Fitted::Cgnp { model, .. } => save_checkpoint(&path, training.model.as_str(), &model.config, params)?,
        _ => save_checkpoint(&path, training.model.as_str(), &cfg.baseline, params)?,
    }
    if let Some(report) = &training.report {
        let report_path = dir.join(format!("{}.train.json", run_stem(cfg, training.model)));
        let text = serde_json::to_string_pretty(report)?;
        fs::write(&report_path, text).map_err(|e| Error::io(&report_path, e))?;
    }
    Ok(Some(path))
}

/// Rebuilds a trained model from a checkpoint written by [`save_training`].
pub fn restore_model(cfg: &ExperimentConfig, model: ModelName, tasks: &TaskSet, path: &Path) -> Result<Fitted> {
    let ck = load_checkpoint(path)?;
    if ck.tag != model.as_str() {
        return Err(Error::Input(format!(
            "{} holds a {} model, not {model}",
            path.display(),
            ck.tag
        )));
    }
    let mut cfg = cfg.clone();
    if model.decoder().is_some() {
        cfg.cgnp = serde_json::from_value::<CgnpConfig>(ck.config)?;
    } else {
        cfg.baseline = serde_json::from_value::<BaselineConfig>(ck.config)?;
    }
    let mut fitted = Fitted::new(&cfg, model, feature_dim(tasks)?)?;
    let params = fitted
        .params_mut()
        .ok_or_else(|| Error::Input(format!("{model} has no trained parameters")))?;
    params.check_compatible(&ck.params)?;
    *params = ck.params;
    Ok(fitted)
}

/// Test results of one model on one task set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub model: ModelName,
    pub scenario: String,
    pub shots: usize,
    pub seed: u64,
    pub config_hash: String,
    pub taskset_digest: String,
    pub predictions: usize,
    pub mean: Metrics,
    pub per_task: Vec<TaskResult>,
    pub train_report: Option<TrainReport>,
    pub notes: Vec<String>,
    /// Wall-clock figures; kept out of the deterministic summary file.
    #[serde(skip)]
    pub timing: Timing,
    #[serde(skip)]
    pub rows: Vec<QueryOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub train_seconds: f64,
    pub test_seconds: f64,
    /// `(task id, milliseconds)` of every test task prediction.
    pub predict_ms: Vec<(String, f64)>,
}

impl ResultsTable {
    pub fn stem(&self) -> String {
        format!("{}_{}_{}shot", self.model, self.scenario, self.shots)
    }

    /// Writes `<stem>.json` (summary) and `<stem>.timing.json`.
    pub fn write_summary(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{}.json", self.stem()));
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))?;
        let path = dir.join(format!("{}.timing.json", self.stem()));
        fs::write(&path, serde_json::to_string_pretty(&self.timing)? + "\n").map_err(|e| Error::io(&path, e))
    }
}

const CSV_HEADER: [&str; 6] = ["task_id", "query_id", "acc", "pre", "rec", "f1"];

/// Scores every query-set query of the test tasks. With `out`, the per-query CSV is written
/// and flushed task by task, so a failure leaves the finished rows on disk.
pub fn evaluate_model(
    cfg: &ExperimentConfig,
    model: ModelName,
    fitted: &Fitted,
    tasks: &TaskSet,
    out: Option<&Path>,
) -> Result<ResultsTable> {
    let scorer = fitted.scorer();
    let mut writer = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(format!("{}.csv", run_stem(cfg, model)));
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = csv::Writer::from_writer(file);
            w.write_record(CSV_HEADER)?;
            Some(w)
        }
        None => None,
    };
    let mut rows = Vec::new();
    let mut per_task = Vec::new();
    let mut timing = Timing::default();
    let start = Instant::now();
    for task in &tasks.test {
        let t0 = Instant::now();
        let outcomes = score_tasks(scorer.as_ref(), std::slice::from_ref(task))?;
        timing.predict_ms.push((task.id.clone(), t0.elapsed().as_secs_f64() * 1e3));
        if let Some(w) = writer.as_mut() {
            for o in &outcomes {
                let m = o.metrics;
                w.write_record([
                    o.task_id.clone(),
                    o.query.to_string(),
                    m.acc.to_string(),
                    m.pre.to_string(),
                    m.rec.to_string(),
                    m.f1.to_string(),
                ])?;
            }
            w.flush().map_err(|e| Error::io(out.expect("writer implies a directory"), e))?;
        }
        let task_metrics: Vec<Metrics> = outcomes.iter().map(|o| o.metrics).collect();
        per_task.push(TaskResult {
            task_id: task.id.clone(),
            metrics: Metrics::mean(&task_metrics),
        });
        rows.extend(outcomes);
    }
    timing.test_seconds = start.elapsed().as_secs_f64();
    let all: Vec<Metrics> = rows.iter().map(|o| o.metrics).collect();
    let mut notes = Vec::new();
    if model == ModelName::Gpn {
        notes.push(format!(
            "gpn builds each test query's prototypes from {}+/{}- sampled ground-truth labels",
            cfg.baseline.gpn_proto_pos, cfg.baseline.gpn_proto_neg
        ));
    }
    if let Some(mut w) = writer {
        w.flush().map_err(|e| Error::io(out.expect("writer implies a directory"), e))?;
    }
    Ok(ResultsTable {
        model,
        scenario: cfg.scenario.scenario.to_string(),
        shots: cfg.scenario.shots,
        seed: cfg.seed,
        config_hash: cfg.hash()?,
        taskset_digest: tasks.digest()?,
        predictions: rows.len(),
        mean: Metrics::mean(&all),
        per_task,
        train_report: None,
        notes,
        timing,
        rows,
    })
}

/// Builds or loads the tasks, trains the configured model, evaluates it on the test tasks and
/// writes the checkpoint, per-query CSV, summary and timing files under `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    cfg.validate()?;
    let tasks = prepare_tasks(cfg)?;
    run_on_tasks(cfg, cfg.model, &tasks, Some(&cfg.out))
}

/// [`run_experiment`] for one model on an existing task set; writes files only with `out`.
pub fn run_on_tasks(cfg: &ExperimentConfig, model: ModelName, tasks: &TaskSet, out: Option<&Path>) -> Result<ResultsTable> {
    let training = train_model(cfg, model, tasks)?;
    if let Some(dir) = out {
        save_training(cfg, &training, dir)?;
    }
    let mut table = evaluate_model(cfg, model, &training.fitted, tasks, out)?;
    table.train_report = training.report;
    table.timing.train_seconds = training.seconds;
    if let Some(dir) = out {
        table.write_summary(dir)?;
        log_line(dir, &table)?;
    }
    Ok(table)
}

/// Appends a one-line human-readable record to `<dir>/runs.log`.
fn log_line(dir: &Path, t: &ResultsTable) -> Result<()> {
    let path = dir.join("runs.log");
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(
        f,
        "{} seed={} f1={:.4} pre={:.4} rec={:.4} acc={:.4} train_s={:.1} test_s={:.1}",
        t.stem(),
        t.seed,
        t.mean.f1,
        t.mean.pre,
        t.mean.rec,
        t.mean.acc,
        t.timing.train_seconds,
        t.timing.test_seconds
    )
    .map_err(|e| Error::io(&path, e))
}
