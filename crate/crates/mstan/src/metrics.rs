//! Confusion-matrix evaluation for binary risk predictions: accuracy,
//! precision, recall, and F1, plus threshold sweeps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot evaluate empty inputs")]
    Empty,
    #[error("prediction and label lengths differ: {predictions} vs {labels}")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("threshold must lie in (0, 1), got {0}")]
    BadThreshold(f64),
}

/// Confusion counts and the derived metrics at one decision threshold.
/// Any 0/0 ratio is reported as 0 so downstream CSVs stay total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Score predictions against labels. A probability equal to the threshold
/// counts as a positive prediction.
pub fn evaluate(y_hat: &[f64], y: &[u8], threshold: f64) -> Result<MetricsReport, MetricsError> {
    if y_hat.is_empty() {
        return Err(MetricsError::Empty);
    }
    if y_hat.len() != y.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: y_hat.len(),
            labels: y.len(),
        });
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MetricsError::BadThreshold(threshold));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &label) in y_hat.iter().zip(y) {
        let predicted = p >= threshold;
        match (predicted, label == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MetricsReport {
        tp,
        fp,
        tn,
        fn_,
        accuracy: ratio(tp + tn, y.len()),
        precision,
        recall,
        f1,
        threshold,
    })
}

/// One report per threshold, in grid order.
pub fn threshold_sweep(
    y_hat: &[f64],
    y: &[u8],
    grid: &[f64],
) -> Result<Vec<MetricsReport>, MetricsError> {
    assert!(!grid.is_empty(), "threshold grid must be nonempty");
    grid.iter().map(|&t| evaluate(y_hat, y, t)).collect()
}
