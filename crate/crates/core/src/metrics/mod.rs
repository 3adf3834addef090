//! Classification metrics, ROC curves, the +-k difference histogram and the
//! evaluation map.

mod io;

pub use io::{export_evaluation_map, write_diff_hist_csv, write_metrics_json, write_roc_csv, EvalRow};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("row {row} is not a probability vector (sum {sum})")]
    NotProbabilities { row: usize, sum: f64 },
    #[error("class index {0} out of range")]
    Class(usize),
    #[error("ROC needs at least one positive and one negative sample")]
    SingleClass,
    #[error("evaluation map: {0}")]
    Join(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rows are truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(truth: &[usize], pred: &[usize], k: usize) -> Result<Self, MetricsError> {
        if truth.len() != pred.len() {
            return Err(MetricsError::Length(format!("{} truths vs {} predictions", truth.len(), pred.len())));
        }
        let mut counts = vec![vec![0u64; k]; k];
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= k {
                return Err(MetricsError::Class(t));
            }
            if p >= k {
                return Err(MetricsError::Class(p));
            }
            counts[t][p] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the class is absent from the truth (or is the only class).
    pub auc: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Mean over classes with a defined AUC.
    pub macro_auc: Option<f64>,
    pub n_samples: usize,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Area under the ROC curve by the Mann-Whitney statistic: the probability
/// that a random positive outscores a random negative, ties counting half.
pub fn auc_mann_whitney(positive: &[bool], scores: &[f64]) -> Option<f64> {
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based mid-ranks of the positives (doubled to stay integral).
    let mut rank2_pos: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        let pos_in_tie = order[i..=j].iter().filter(|&&o| positive[o]).count() as u128;
        rank2_pos += mid2 * pos_in_tie;
        i = j + 1;
    }
    let u2 = rank2_pos - (n_pos as u128) * (n_pos as u128 + 1);
    Some(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Accuracy from argmax, one-vs-rest precision/recall/F1 (0/0 counts as
/// 0), per-class AUC and unweighted macro means.
pub fn compute_metrics(truth: &[usize], probs: &[Vec<f64>]) -> Result<MetricsReport, MetricsError> {
    if truth.len() != probs.len() {
        return Err(MetricsError::Length(format!("{} truths vs {} probability rows", truth.len(), probs.len())));
    }
    let k = probs.first().map_or(0, Vec::len);
    for (row, p) in probs.iter().enumerate() {
        let sum: f64 = p.iter().sum();
        if p.len() != k || (sum - 1.0).abs() > 1e-6 || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(MetricsError::NotProbabilities { row, sum });
        }
    }
    let pred: Vec<usize> = probs.iter().map(|p| crate::model::argmax(p)).collect();
    let confusion = ConfusionMatrix::new(truth, &pred, k)?;
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = confusion.counts[c][c];
        let support: u64 = confusion.counts[c].iter().sum();
        let predicted: u64 = (0..k).map(|r| confusion.counts[r][c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let positive: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let auc = auc_mann_whitney(&positive, &scores);
        if auc.is_none() && support == 0 {
            log::warn!("class index {c} is absent from the truth; excluded from macro AUC");
        }
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            auc,
            support,
        });
    }
    let mean = |f: &dyn Fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    let aucs: Vec<f64> = per_class.iter().filter_map(|c| c.auc).collect();
    Ok(MetricsReport {
        accuracy: ratio(confusion.trace(), confusion.total()),
        macro_precision: mean(&|c| c.precision),
        macro_recall: mean(&|c| c.recall),
        macro_f1: mean(&|c| c.f1),
        macro_auc: if aucs.is_empty() {
            None
        } else {
            Some(aucs.iter().sum::<f64>() / aucs.len() as f64)
        },
        n_samples: truth.len(),
        per_class,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    }
}

/// Threshold sweep over the distinct scores, highest first. The first
/// point is (0, 0) at threshold +inf; the last is (1, 1).
pub fn roc_curve(positive: &[bool], scores: &[f64]) -> Result<RocCurve, MetricsError> {
    if positive.len() != scores.len() {
        return Err(MetricsError::Length(format!("{} labels vs {} scores", positive.len(), scores.len())));
    }
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(RocCurve { points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffHistogram {
    /// `counts[d]` = number of samples with |truth - pred| = d.
    pub counts: Vec<u64>,
    pub percent: Vec<f64>,
    pub total: u64,
}

/// Histogram of |truth - pred| over ordinal labels with `k` classes.
pub fn difference_histogram(truth: &[i64], pred: &[i64], k: usize) -> Result<DiffHistogram, MetricsError> {
    if truth.len() != pred.len() {
        return Err(MetricsError::Length(format!("{} truths vs {} predictions", truth.len(), pred.len())));
    }
    let mut counts = vec![0u64; k.max(1)];
    for (&t, &p) in truth.iter().zip(pred) {
        let d = (t - p).unsigned_abs() as usize;
        if d >= counts.len() {
            return Err(MetricsError::Class(d));
        }
        counts[d] += 1;
    }
    let total = truth.len() as u64;
    let percent = counts.iter().map(|&c| 100.0 * ratio(c, total)).collect();
    Ok(DiffHistogram { counts, percent, total })
}
