//! Macro-averaged F1.

use crate::error::{Error, Result};

/// Unweighted mean of per-class F1 over all `classes` classes. A class that
/// never appears in either `preds` or `labels` contributes an F1 of 0, so the
/// score is comparable across runs with the same class count even when a
/// model collapses onto a subset of classes.
pub fn macro_f1(preds: &[usize], labels: &[usize], classes: usize) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if classes == 0 {
        return Err(Error::MetricInput("class count must be positive".into()));
    }
    for &p in preds {
        if p >= classes {
            return Err(Error::LabelOutOfRange {
                label: p,
                classes,
            });
        }
    }
    for &l in labels {
        if l >= classes {
            return Err(Error::LabelOutOfRange {
                label: l,
                classes,
            });
        }
    }
    let mut sum = 0.0;
    for c in 0..classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (&p, &l) in preds.iter().zip(labels) {
            match (p == c, l == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            sum += 2.0 * tp as f64 / denom as f64;
        }
    }
    Ok(sum / classes as f64)
}
