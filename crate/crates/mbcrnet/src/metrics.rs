//! Confusion-matrix metrics with abnormal (label 1) as the positive class.

use crate::error::{Error, Result};

/// Accuracy and sensitivity counts for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Metrics {
    pub true_pos: usize,
    pub true_neg: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

impl Metrics {
    pub fn from_predictions(predictions: &[u8], labels: &[u8]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", predictions.len()),
                got: format!("{}", labels.len()),
            });
        }
        if predictions.is_empty() {
            return Err(Error::EmptyTestSet);
        }
        let mut m = Metrics::default();
        for (&p, &l) in predictions.iter().zip(labels.iter()) {
            match (p, l) {
                (1, 1) => m.true_pos += 1,
                (0, 0) => m.true_neg += 1,
                (1, 0) => m.false_pos += 1,
                (0, 1) => m.false_neg += 1,
                _ => return Err(Error::InvalidArg("labels must be 0 or 1".into())),
            }
        }
        Ok(m)
    }

    pub fn total(&self) -> usize {
        self.true_pos + self.true_neg + self.false_pos + self.false_neg
    }

    pub fn acc(&self) -> f64 {
        (self.true_pos + self.true_neg) as f64 / self.total() as f64
    }

    /// Sensitivity TP/(TP+FN); undefined when no positives are present.
    pub fn se(&self) -> Option<f64> {
        let denom = self.true_pos + self.false_neg;
        if denom == 0 {
            None
        } else {
            Some(self.true_pos as f64 / denom as f64)
        }
    }
}

pub fn format_pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.2}%", v * 100.0),
        None => "n/a".to_string(),
    }
}
