use serde::{Deserialize, Serialize};

use crate::tgraph::Setting;

/// Average precision of `scores` ranked descending, ties kept in input
/// order: the mean over positives of the precision at their rank. Zero
/// when there are no positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> f64 {
    assert_eq!(scores.len(), labels.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    sum / positives as f64
}

/// Fraction of items where `score > 0.5` agrees with the label.
pub fn accuracy(scores: &[f64], labels: &[bool]) -> f64 {
    assert_eq!(scores.len(), labels.len());
    if scores.is_empty() {
        return 0.0;
    }
    let correct = scores.iter().zip(labels).filter(|(&s, &l)| (s > 0.5) == l).count();
    correct as f64 / scores.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub setting: Setting,
    pub acc: f64,
    pub ap: f64,
    /// Scored items: positives plus one negative each.
    pub count: usize,
}

impl EvalMetrics {
    pub fn from_scores(setting: Setting, scores: &[f64], labels: &[bool]) -> Self {
        Self {
            setting,
            acc: accuracy(scores, labels),
            ap: average_precision(scores, labels),
            count: scores.len(),
        }
    }
}
