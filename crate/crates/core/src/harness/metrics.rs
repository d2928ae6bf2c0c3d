use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positive-class precision, recall and F1 with the confusion counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub dataset: String,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    pub fn from_counts(model: &str, dataset: &str, tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        MetricsReport {
            model: model.to_string(),
            dataset: dataset.to_string(),
            tp,
            fp,
            fn_,
            tn,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            // 2TP / (2TP + FP + FN) equals 2PR / (P + R) whenever P + R > 0.
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }

    /// Counts in one pass over paired gold/predicted labels (1 = positive).
    pub fn compute(model: &str, dataset: &str, gold: &[u8], predicted: &[u8]) -> Result<Self> {
        if gold.len() != predicted.len() {
            return Err(Error::validation(format!(
                "{} gold labels but {} predictions",
                gold.len(),
                predicted.len()
            )));
        }
        if gold.is_empty() {
            return Err(Error::validation("cannot evaluate an empty set"));
        }
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (&g, &p) in gold.iter().zip(predicted) {
            match (g, p) {
                (1, 1) => tp += 1,
                (0, 1) => fp += 1,
                (1, 0) => fn_ += 1,
                (0, 0) => tn += 1,
                _ => return Err(Error::validation(format!("labels must be 0 or 1, got ({g}, {p})"))),
            }
        }
        Ok(Self::from_counts(model, dataset, tp, fp, fn_, tn))
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// The same counts with the negative class as reference.
    pub fn negative_class(&self) -> Self {
        Self::from_counts(&self.model, &self.dataset, self.tn, self.fn_, self.fp, self.tp)
    }

    /// Unweighted mean of the positive- and negative-class (P, R, F1).
    pub fn macro_average(&self) -> (f64, f64, f64) {
        let n = self.negative_class();
        (
            (self.precision + n.precision) / 2.0,
            (self.recall + n.recall) / 2.0,
            (self.f1 + n.f1) / 2.0,
        )
    }

    /// `model  P%  R%  F1%` with two decimals.
    pub fn table_row(&self, width: usize) -> String {
        format!(
            "{:<width$}  {:>9.2}  {:>9.2}  {:>9.2}",
            self.model,
            100.0 * self.precision,
            100.0 * self.recall,
            100.0 * self.f1
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model: {}  dataset: {}", self.model, self.dataset)?;
        writeln!(f, "TP {}  FP {}  FN {}  TN {}", self.tp, self.fp, self.fn_, self.tn)?;
        write!(
            f,
            "Precision(%) {:.2}  Recall(%) {:.2}  F1(%) {:.2}",
            100.0 * self.precision,
            100.0 * self.recall,
            100.0 * self.f1
        )
    }
}
