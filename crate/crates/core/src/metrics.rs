//! Evaluation metrics: accuracy, micro/macro F1 over confusion counts,
//! and cross-episode aggregation with normal-approximation confidence
//! intervals.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Per-label TP/FP/FN counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(n_labels: usize) -> Self {
        ConfusionCounts {
            tp: vec![0; n_labels],
            fp: vec![0; n_labels],
            fn_: vec![0; n_labels],
        }
    }

    pub fn n_labels(&self) -> usize {
        self.tp.len()
    }

    /// Accumulates one document's predicted/gold label indicator vectors.
    pub fn observe(&mut self, predicted: &[bool], gold: &[bool]) {
        assert_eq!(predicted.len(), self.tp.len(), "prediction width mismatch");
        assert_eq!(gold.len(), self.tp.len(), "gold width mismatch");
        for j in 0..self.tp.len() {
            match (predicted[j], gold[j]) {
                (true, true) => self.tp[j] += 1,
                (true, false) => self.fp[j] += 1,
                (false, true) => self.fn_[j] += 1,
                (false, false) => {}
            }
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        assert_eq!(self.n_labels(), other.n_labels());
        for j in 0..self.tp.len() {
            self.tp[j] += other.tp[j];
            self.fp[j] += other.fp[j];
            self.fn_[j] += other.fn_[j];
        }
    }
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    // 0/0 convention: a label with no gold positives and no predictions
    // contributes 0
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Exact-match fraction over single-label predictions.
pub fn accuracy(predictions: &[usize], gold: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != gold.len() {
        return Err(Error::Contract(
            "accuracy needs equal-length, nonempty prediction and gold lists".into(),
        ));
    }
    let correct = predictions
        .iter()
        .zip(gold.iter())
        .filter(|(p, g)| p == g)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// F1 from label-pooled TP/FP/FN counts.
pub fn micro_f1(counts: &ConfusionCounts) -> f64 {
    assert!(counts.n_labels() > 0, "micro_f1 over zero labels");
    let tp: u64 = counts.tp.iter().sum();
    let fp: u64 = counts.fp.iter().sum();
    let fn_: u64 = counts.fn_.iter().sum();
    f1(tp, fp, fn_)
}

/// Mean of per-label F1 scores.
pub fn macro_f1(counts: &ConfusionCounts) -> f64 {
    assert!(counts.n_labels() > 0, "macro_f1 over zero labels");
    let sum: f64 = (0..counts.n_labels())
        .map(|j| f1(counts.tp[j], counts.fp[j], counts.fn_[j]))
        .sum();
    sum / counts.n_labels() as f64
}

/// Mean and 95% confidence half-width over per-episode metric values.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateResult {
    pub metric: String,
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval; infinite with
    /// a warning when fewer than 2 values were provided.
    pub ci95_half: f64,
    pub runs: usize,
}

pub fn aggregate(metric: &str, values: &[f64]) -> AggregateResult {
    let n = values.len();
    let mean = if n == 0 {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / n as f64
    };
    let ci95_half = if n < 2 {
        f64::INFINITY
    } else {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        1.96 * math::sqrt(var) / math::sqrt(n as f64)
    };
    AggregateResult {
        metric: metric.into(),
        mean,
        ci95_half,
        runs: n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_basics() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0, 0, 0], &[1, 1, 1, 1]).unwrap(), 0.25);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn perfect_predictions_give_unit_f1() {
        let mut c = ConfusionCounts::new(3);
        c.observe(&[true, false, true], &[true, false, true]);
        c.observe(&[false, true, false], &[false, true, false]);
        assert_eq!(micro_f1(&c), 1.0);
        assert_eq!(macro_f1(&c), 1.0);
    }

    #[test]
    fn hand_computed_confusion_arithmetic() {
        // label A: TP=1, FP=1, FN=0 → F1 = 2/3; label B: TP=1, FP=0, FN=1 → 2/3
        let c = ConfusionCounts {
            tp: vec![1, 1],
            fp: vec![1, 0],
            fn_: vec![0, 1],
        };
        assert!((macro_f1(&c) - 2.0 / 3.0).abs() < 1e-15);
        // pooled TP=2, FP=1, FN=1 → micro = 2/3
        assert!((micro_f1(&c) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn no_predictions_with_gold_positives_is_zero() {
        let mut c = ConfusionCounts::new(2);
        c.observe(&[false, false], &[true, true]);
        assert_eq!(micro_f1(&c), 0.0);
        assert_eq!(macro_f1(&c), 0.0);
    }

    #[test]
    fn micro_equals_macro_on_identical_per_label_counts() {
        let c = ConfusionCounts {
            tp: vec![3, 3, 3],
            fp: vec![1, 1, 1],
            fn_: vec![2, 2, 2],
        };
        assert!((micro_f1(&c) - macro_f1(&c)).abs() < 1e-15);
    }

    #[test]
    fn f1_is_invariant_to_label_permutation() {
        let c = ConfusionCounts {
            tp: vec![5, 0, 2],
            fp: vec![1, 3, 0],
            fn_: vec![0, 2, 4],
        };
        let p = ConfusionCounts {
            tp: vec![2, 5, 0],
            fp: vec![0, 1, 3],
            fn_: vec![4, 0, 2],
        };
        assert!((micro_f1(&c) - micro_f1(&p)).abs() < 1e-15);
        assert!((macro_f1(&c) - macro_f1(&p)).abs() < 1e-15);
    }

    #[test]
    fn aggregate_constant_values_has_zero_width() {
        let r = aggregate("acc", &[0.7, 0.7, 0.7]);
        assert!((r.mean - 0.7).abs() < 1e-12);
        assert!(r.ci95_half.abs() < 1e-7);
    }

    #[test]
    fn aggregate_bernoulli_half_width() {
        let mut values = alloc::vec![0.0; 50];
        values.extend(alloc::vec![1.0; 50]);
        let r = aggregate("acc", &values);
        assert!((r.mean - 0.5).abs() < 1e-15);
        assert!((r.ci95_half - 0.0985).abs() < 5e-4);
    }

    #[test]
    fn aggregate_single_value_is_infinite_interval() {
        let r = aggregate("acc", &[0.3]);
        assert_eq!(r.mean, 0.3);
        assert!(r.ci95_half.is_infinite());
    }
}
