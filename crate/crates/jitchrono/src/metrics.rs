//! Threshold-independent performance measures.

use thiserror::Error;

use crate::preprocess::average_ranks;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("single class: AUC needs at least one positive and one negative label")]
    SingleClass,
}

/// Scores paired with their true labels.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl PredictionSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Self {
        assert_eq!(scores.len(), labels.len());
        assert!(!scores.is_empty());
        assert!(scores.iter().all(|s| s.is_finite()));
        PredictionSet { scores, labels }
    }
}

/// Area under the ROC curve via the rank-sum (Mann-Whitney) formulation:
/// the probability that a random positive outranks a random negative,
/// ties counted 1/2. O(n log n).
pub fn auc(p: &PredictionSet) -> Result<f64, MetricsError> {
    let n_pos = p.labels.iter().filter(|&&l| l).count();
    let n_neg = p.labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let ranks = average_ranks(&p.scores);
    let rank_sum_pos: f64 = ranks
        .iter()
        .zip(&p.labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Brier score: mean squared difference between score and 0/1 outcome.
pub fn brier(p: &PredictionSet) -> f64 {
    let n = p.scores.len() as f64;
    p.scores
        .iter()
        .zip(&p.labels)
        .map(|(&s, &l)| {
            let x = if l { 1.0 } else { 0.0 };
            (x - s) * (x - s)
        })
        .sum::<f64>()
        / n
}
