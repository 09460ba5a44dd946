//! Metrics, evaluation of trained scorers and experiment orchestration.

mod config;
mod experiment;
mod metrics;
mod report;
mod sweep;

pub use config::{load_datasets, prepare_tasks, DatasetSpec, ExperimentConfig, ModelName, SweepConfig};
pub use experiment::{
    evaluate_model, restore_model, run_experiment, run_on_tasks, run_stem, save_training,
    train_model, Fitted, ResultsTable, TaskResult, Timing, Training,
};
pub use metrics::{compute_metrics, Metrics};
pub use report::{collect_summaries, render_report, report_rows, write_report, ReportRow};
pub use sweep::{ablation_grid, ratio_sweep, relabel_support, AblationRow, SweepRow};

use crate::cgnp::predict_community;
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::task::Task;

/// Anything that assigns a membership probability to every node of a task for each of its
/// query-set queries.
pub trait Scorer {
    /// One probability vector (length `n`) per query-set query, in query-set order.
    fn predict_task(&self, task: &Task) -> Result<Vec<Vec<f64>>>;

    fn threshold(&self) -> f64 {
        0.5
    }
}

/// Metrics of one query-set query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryOutcome {
    pub task_id: String,
    pub query: NodeId,
    pub metrics: Metrics,
}

pub fn score_tasks(scorer: &(impl Scorer + ?Sized), tasks: &[Task]) -> Result<Vec<QueryOutcome>> {
    let mut out = Vec::new();
    for task in tasks {
        let probs = scorer.predict_task(task)?;
        if probs.len() != task.queryset.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} queries in task {}",
                probs.len(),
                task.queryset.len(),
                task.id
            )));
        }
        for (p, t) in probs.iter().zip(&task.queryset) {
            let predicted = predict_community(p, t.query, scorer.threshold());
            out.push(QueryOutcome {
                task_id: task.id.clone(),
                query: t.query,
                metrics: compute_metrics(&predicted, &t.members, task.node_count())?,
            });
        }
    }
    Ok(out)
}

/// Mean metrics over every query-set query of `tasks`.
pub fn evaluate_scorer(scorer: &(impl Scorer + ?Sized), tasks: &[Task]) -> Result<Metrics> {
    let outcomes = score_tasks(scorer, tasks)?;
    let all: Vec<Metrics> = outcomes.iter().map(|o| o.metrics).collect();
    Ok(Metrics::mean(&all))
}
