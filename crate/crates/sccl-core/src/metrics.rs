//! Classification metrics over the six emotion classes.

use crate::corpus::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Unweighted mean of per-class F1; zero-support classes contribute 0.
    pub macro_f1: f64,
    /// Global F1, which equals accuracy for single-label classification.
    pub micro_f1: f64,
    /// `confusion[label][pred]`; row sums are the per-class support.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    /// Classes with no true examples, flagged because they drag macro-F1.
    pub zero_support: Vec<usize>,
}

impl Metrics {
    /// Compute from `(predicted, label)` pairs.
    pub fn from_pairs(pairs: &[(usize, usize)]) -> Metrics {
        let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
        for &(pred, label) in pairs {
            confusion[label][pred] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn from_confusion(confusion: [[usize; NUM_CLASSES]; NUM_CLASSES]) -> Metrics {
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
        let accuracy = correct as f64 / total as f64;

        let mut macro_f1 = 0.0;
        let mut zero_support = Vec::new();
        for c in 0..NUM_CLASSES {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = (0..NUM_CLASSES).map(|r| confusion[r][c]).sum();
            if support == 0 {
                zero_support.push(c);
            }
            let precision = if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 };
            let recall = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            macro_f1 += f1;
        }
        macro_f1 /= NUM_CLASSES as f64;

        Metrics { accuracy, macro_f1, micro_f1: accuracy, confusion, zero_support }
    }

    /// Per-class support (true example counts).
    pub fn support(&self) -> [usize; NUM_CLASSES] {
        let mut s = [0; NUM_CLASSES];
        for (c, row) in self.confusion.iter().enumerate() {
            s[c] = row.iter().sum();
        }
        s
    }
}

/// Percentage with two decimals, the report format used throughout.
pub fn percent(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}
