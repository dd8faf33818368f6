use serde::{Deserialize, Serialize};

use crate::autodiff::{bce_value, ParamStore};
use crate::error::{Error, Result};

/// Confusion counts and derived scores of a thresholded predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub f1: f64,
    pub accuracy: f64,
    /// Unregularized mean cross-entropy of the probabilities.
    pub loss: f64,
}

/// Predicts positive where `y_hat >= threshold`.
pub fn evaluate(y_hat: &[f64], y: &[f64], threshold: f64) -> Result<Metrics> {
    if y_hat.is_empty() {
        return Err(Error::param("cannot evaluate an empty prediction set"));
    }
    if y_hat.len() != y.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            y_hat.len(),
            y.len()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::param(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &label) in y_hat.iter().zip(y) {
        match (p >= threshold, label >= 0.5) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(Metrics {
        tp,
        fp,
        tn,
        fn_,
        f1: f1_score(tp, fp, fn_),
        accuracy: (tp + tn) as f64 / y.len() as f64,
        loss: bce_value(y_hat, y),
    })
}

pub fn f1_score(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// `BCE(y_hat, y) + beta * sum of squared parameter entries`.
pub fn compute_loss(y_hat: &[f64], y: &[f64], params: &ParamStore, beta: f64) -> Result<f64> {
    if y_hat.is_empty() {
        return Err(Error::param("empty labeled set"));
    }
    if y_hat.len() != y.len() {
        return Err(Error::shape("prediction and label counts differ"));
    }
    Ok(bce_value(y_hat, y) + beta * params.sum_squares())
}
