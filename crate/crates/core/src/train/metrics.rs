use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub accuracy: f64,
    pub per_class: Vec<ClassScores>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Result<Self> {
        let c = confusion.len();
        if confusion.iter().any(|r| r.len() != c) {
            return Err(Error::Dimension("confusion matrix must be square".into()));
        }
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
        let per_class: Vec<ClassScores> = (0..c)
            .map(|k| {
                let tp = confusion[k][k];
                let predicted: usize = (0..c).map(|t| confusion[t][k]).sum();
                let actual: usize = confusion[k].iter().sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, actual);
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassScores {
                    precision,
                    recall,
                    f1,
                    support: actual,
                }
            })
            .collect();
        // pooled TP / (TP + FP); every wrong prediction is one FP and one FN
        let micro_f1 = ratio(correct, total);
        Ok(Metrics {
            macro_f1: per_class.iter().map(|s| s.f1).sum::<f64>() / c.max(1) as f64,
            micro_f1,
            accuracy: ratio(correct, total),
            per_class,
            confusion,
        })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Dimension(format!(
                "{} labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::Contract(format!("class index outside [0, {num_classes})")));
            }
            confusion[t][p] += 1;
        }
        Metrics::from_confusion(confusion)
    }
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(probs: &crate::numcore::Tensor) -> Vec<usize> {
    (0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
