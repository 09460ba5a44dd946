use std::fs::{self, File};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelName};
use super::experiment::run_on_tasks;
use crate::baselines::task_rng;
use crate::cgnp::CombineMode;
use crate::error::{Error, Result};
use crate::nn::LayerKind;
use crate::task::{QueryLabels, Task, TaskSet};

/// Number of labels for a percentage of a pool, at least one.
fn share(pct: f64, pool: usize) -> usize {
    ((pct / 100.0 * pool as f64).round() as usize).max(1)
}

/// New support labels: `pos_pct`% of the query's community inside the task graph as
/// positives, and `neg_pct`% of a pool of `negative_pool` outside nodes as negatives.
/// Returns `None` when a support query has no other community member to label.
pub fn relabel_support(
    task: &Task,
    pos_pct: f64,
    neg_pct: f64,
    negative_pool: usize,
    rng: &mut impl Rng,
) -> Result<Option<Task>> {
    if task.support_truth().is_empty() && !task.support.is_empty() {
        return Err(Error::Input(format!(
            "task {} carries no support ground truth to relabel from",
            task.id
        )));
    }
    let n = task.node_count();
    let mut support = Vec::with_capacity(task.support.len());
    for t in task.support_truth() {
        if t.members.len() < 2 {
            return Ok(None);
        }
        let pos = share(pos_pct, t.members.len()).min(t.members.len() - 1);
        let outside = n - t.members.len();
        let pool = negative_pool.min(outside);
        let neg = if pool == 0 { 0 } else { share(neg_pct, pool).min(pool) };
        let mut labels: QueryLabels = t.sample_labels(n, pos, pool, rng);
        labels.negatives.truncate(neg);
        support.push(labels);
    }
    task.with_support(support).map(Some)
}

fn relabel_set(tasks: &[Task], pos: f64, neg: f64, pool: usize, seed: u64) -> Result<(Vec<Task>, usize)> {
    let mut out = Vec::with_capacity(tasks.len());
    let mut skipped = 0;
    for t in tasks {
        let mut rng = task_rng(seed, &format!("ratio:{pos}:{neg}:{}", t.id));
        match relabel_support(t, pos, neg, pool, &mut rng)? {
            Some(t) => out.push(t),
            None => skipped += 1,
        }
    }
    Ok((out, skipped))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: ModelName,
    pub pos_pct: f64,
    pub neg_pct: f64,
    pub acc: f64,
    pub pre: f64,
    pub rec: f64,
    pub f1: f64,
    /// Tasks dropped because a support query had no community member to label.
    pub skipped_tasks: usize,
}

/// F1 against the ground-truth ratio for every model in `cfg.sweep.models`. Support labels of
/// every split are regenerated at each ratio point; query-set training labels are unchanged.
/// With `out`, writes `ratio_sweep.csv`.
pub fn ratio_sweep(cfg: &ExperimentConfig, tasks: &TaskSet, out: Option<&Path>) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &(pos, neg) in &cfg.sweep.ratios {
        let pool = cfg.sweep.negative_pool;
        let (train, s1) = relabel_set(&tasks.train, pos, neg, pool, cfg.seed)?;
        let (valid, s2) = relabel_set(&tasks.valid, pos, neg, pool, cfg.seed)?;
        let (test, s3) = relabel_set(&tasks.test, pos, neg, pool, cfg.seed)?;
        let skipped = s1 + s2 + s3;
        if test.is_empty() {
            continue;
        }
        let relabeled = TaskSet { train, valid, test };
        for &model in &cfg.sweep.models {
            let table = run_on_tasks(cfg, model, &relabeled, None)?;
            rows.push(SweepRow {
                model,
                pos_pct: pos,
                neg_pct: neg,
                acc: table.mean.acc,
                pre: table.mean.pre,
                rec: table.mean.rec,
                f1: table.mean.f1,
                skipped_tasks: skipped,
            });
        }
    }
    if let Some(dir) = out {
        write_rows(dir, "ratio_sweep.csv", &rows)?;
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `encoder` or `combine`: the dimension varied in this row.
    pub sweep: String,
    pub encoder: LayerKind,
    pub combine: CombineMode,
    pub acc: f64,
    pub pre: f64,
    pub rec: f64,
    pub f1: f64,
}

/// The two one-dimensional sweeps over a CGNP variant: encoder layer with average pooling,
/// then commutative operation with a GAT encoder. Same seeds in every cell.
pub fn ablation_grid(cfg: &ExperimentConfig, tasks: &TaskSet, out: Option<&Path>) -> Result<Vec<AblationRow>> {
    if cfg.model.decoder().is_none() {
        return Err(Error::Config(format!("ablation needs a CGNP model, not {}", cfg.model)));
    }
    let mut cells = Vec::new();
    for encoder in [LayerKind::Gcn, LayerKind::Gat, LayerKind::Sage] {
        cells.push(("encoder", encoder, CombineMode::Average));
    }
    for combine in [CombineMode::Sum, CombineMode::Average, CombineMode::Attention] {
        cells.push(("combine", LayerKind::Gat, combine));
    }
    let mut rows = Vec::new();
    for (sweep, encoder, combine) in cells {
        let mut c = cfg.clone();
        c.cgnp.encoder = encoder;
        c.cgnp.combine = combine;
        let table = run_on_tasks(&c, cfg.model, tasks, None)?;
        rows.push(AblationRow {
            sweep: sweep.to_string(),
            encoder,
            combine,
            acc: table.mean.acc,
            pre: table.mean.pre,
            rec: table.mean.rec,
            f1: table.mean.f1,
        });
    }
    if let Some(dir) = out {
        write_rows(dir, "ablation.csv", &rows)?;
    }
    Ok(rows)
}

fn write_rows<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
