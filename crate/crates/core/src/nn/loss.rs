use crate::error::{Error, Result};
use crate::graph::NodeId;

pub const PROB_EPS: f64 = 1e-7;

/// `−Σ log ŷ(v⁺) − Σ log(1 − ŷ(v⁻))` with probabilities clamped to `[ε, 1 − ε]`.
pub fn bce_query_loss(scores: &[f64], positives: &[NodeId], negatives: &[NodeId]) -> Result<f64> {
    if positives.is_empty() && negatives.is_empty() {
        return Err(Error::Input("no labelled samples".into()));
    }
    let clamp = |p: f64| p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let pos: f64 = positives.iter().map(|&v| -clamp(scores[v]).ln()).sum();
    let neg: f64 = negatives.iter().map(|&v| -(1.0 - clamp(scores[v])).ln()).sum();
    Ok(pos + neg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_scores_cost_nothing() {
        let loss = bce_query_loss(&[1.0, 0.0, 1.0], &[0, 2], &[1]).unwrap();
        assert!(loss < 1e-6);
    }

    #[test]
    fn half_is_ln2() {
        let loss = bce_query_loss(&[0.5], &[0], &[]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn empty_labels_are_an_error() {
        assert!(bce_query_loss(&[0.5], &[], &[]).is_err());
    }
}
