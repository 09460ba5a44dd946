use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeId;

/// Quality of one predicted community against the ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub pre: f64,
    pub rec: f64,
    pub f1: f64,
}

impl Metrics {
    /// Coordinate-wise mean (all zeros for an empty slice).
    pub fn mean(items: &[Metrics]) -> Metrics {
        if items.is_empty() {
            return Metrics::default();
        }
        let k = items.len() as f64;
        let sum = |f: fn(&Metrics) -> f64| items.iter().map(f).sum::<f64>() / k;
        Metrics {
            acc: sum(|m| m.acc),
            pre: sum(|m| m.pre),
            rec: sum(|m| m.rec),
            f1: sum(|m| m.f1),
        }
    }
}

/// Accuracy over all `n` nodes, precision, recall and F1 of `predicted` against `truth`.
/// Duplicates are ignored; an empty prediction has precision 0.
pub fn compute_metrics(predicted: &[NodeId], truth: &[NodeId], n: usize) -> Result<Metrics> {
    if truth.is_empty() {
        return Err(Error::Input("empty ground-truth community".into()));
    }
    let mut pred = vec![false; n];
    let mut real = vec![false; n];
    for &v in predicted {
        *pred.get_mut(v).ok_or_else(|| Error::Input(format!("predicted node {v} outside {n}")))? = true;
    }
    for &v in truth {
        *real.get_mut(v).ok_or_else(|| Error::Input(format!("ground-truth node {v} outside {n}")))? = true;
    }
    let (mut tp, mut np, mut nt, mut agree) = (0usize, 0usize, 0usize, 0usize);
    for v in 0..n {
        tp += usize::from(pred[v] && real[v]);
        np += usize::from(pred[v]);
        nt += usize::from(real[v]);
        agree += usize::from(pred[v] == real[v]);
    }
    let pre = if np == 0 { 0.0 } else { tp as f64 / np as f64 };
    let rec = tp as f64 / nt as f64;
    let f1 = if pre + rec > 0.0 { 2.0 * pre * rec / (pre + rec) } else { 0.0 };
    Ok(Metrics {
        acc: agree as f64 / n as f64,
        pre,
        rec,
        f1,
    })
}
