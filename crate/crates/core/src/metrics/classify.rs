use std::fmt;

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Scores in `[0, 1]` paired with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub threshold: f64,
}

impl PredictionSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        Self::with_threshold(scores, labels, DEFAULT_THRESHOLD)
    }

    pub fn with_threshold(scores: Vec<f64>, labels: Vec<u8>, threshold: f64) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Data(format!("{} scores vs {} labels", scores.len(), labels.len())));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Data(format!("score {s} outside [0, 1]")));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Data(format!("label {l} is not binary")));
        }
        Ok(Self { scores, labels, threshold })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let p = self.positives();
        p > 0 && p < self.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Accuracy,
    Sensitivity,
    Specificity,
    Precision,
    F1,
    Auc,
}

impl Metric {
    pub const ALL: [Metric; 6] =
        [Metric::Accuracy, Metric::Sensitivity, Metric::Specificity, Metric::Precision, Metric::F1, Metric::Auc];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Sensitivity => "sensitivity",
            Metric::Specificity => "specificity",
            Metric::Precision => "precision",
            Metric::F1 => "f1",
            Metric::Auc => "auc",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Thresholded confusion counts and the rates derived from them. A rate whose
/// denominator is zero is `None` (not applicable) rather than 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

impl Confusion {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<Self> {
        let total = tp + fp + tn + fn_;
        if total == 0 {
            return Err(Error::Data("empty prediction set".into()));
        }
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        let sensitivity = ratio(tp, tp + fn_);
        let precision = ratio(tp, tp + fp);
        let f1 = match (precision, sensitivity) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        Ok(Self {
            tp,
            fp,
            tn,
            fn_,
            accuracy: (tp + tn) as f64 / total as f64,
            sensitivity,
            specificity: ratio(tn, tn + fp),
            precision,
            f1,
        })
    }

    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Accuracy => Some(self.accuracy),
            Metric::Sensitivity => self.sensitivity,
            Metric::Specificity => self.specificity,
            Metric::Precision => self.precision,
            Metric::F1 => self.f1,
            Metric::Auc => None,
        }
    }
}

/// Confusion metrics at the set's threshold (`score >= threshold` is positive).
pub fn confusion_metrics(p: &PredictionSet) -> Result<Confusion> {
    confusion_of(p.scores.iter().copied().zip(p.labels.iter().copied()), p.threshold)
}

pub(crate) fn confusion_of(pairs: impl Iterator<Item = (f64, u8)>, threshold: f64) -> Result<Confusion> {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (s, l) in pairs {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Confusion::from_counts(tp, fp, tn, fn_)
}

/// Mann–Whitney AUC: share of (positive, negative) pairs ordered correctly,
/// ties counted one half.
pub fn roc_auc(p: &PredictionSet) -> Result<f64> {
    auc_of(&p.scores, &p.labels).ok_or_else(|| Error::Data("ROC AUC needs both classes".into()))
}

pub(crate) fn auc_of(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of mid-ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(scores: &[f64], labels: &[u8]) -> PredictionSet {
        PredictionSet::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn hand_counted_confusion() {
        // TP=2, FP=1, FN=0, TN=3
        let c = Confusion::from_counts(2, 1, 3, 0).unwrap();
        assert_eq!(c.sensitivity, Some(1.0));
        assert_eq!(c.specificity, Some(0.75));
        assert!((c.precision.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.accuracy - 5.0 / 6.0).abs() < 1e-15);
        assert!((c.f1.unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn all_negative_predictions_flag_precision() {
        let c = confusion_metrics(&set(&[0.1, 0.2, 0.3], &[1, 0, 1])).unwrap();
        assert_eq!(c.sensitivity, Some(0.0));
        assert_eq!(c.precision, None);
        assert_eq!(c.f1, None);
        assert!(confusion_metrics(&set(&[], &[])).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&set(&[0.9, 0.2, 0.1, 0.8], &[1, 1, 0, 0])).unwrap(), 0.75);
        assert_eq!(roc_auc(&set(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(roc_auc(&set(&[0.5; 4], &[1, 0, 1, 0])).unwrap(), 0.5);
        assert!(roc_auc(&set(&[0.5, 0.4], &[1, 1])).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(PredictionSet::new(vec![0.5], vec![1, 0]).is_err());
        assert!(PredictionSet::new(vec![1.5], vec![1]).is_err());
        assert!(PredictionSet::new(vec![0.5], vec![2]).is_err());
    }
}
