//! Clip-level evaluation metrics. Score matrices are row-major `[N, C]`.

use crate::engine::{Scalar, Tensor};

use super::TrainError;

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half. `None` when either
/// class is absent.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(
        scores.len(),
        labels.len(),
        "scores and labels differ in length"
    );
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mann-Whitney U with mid-ranks for tied groups; every quantity below is
    // an integer or half-integer, so the sum is exact.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AucSummary {
    pub per_class: Vec<Option<f64>>,
    /// Unweighted mean over classes with a defined AUC.
    pub macro_auc: Option<f64>,
    /// AUC of all (clip, class) pairs pooled together.
    pub micro_auc: Option<f64>,
    /// Classes left out of the macro average (all positive or all negative).
    pub skipped: usize,
}

fn columns<S: Scalar>(m: &Tensor<S>) -> (usize, usize) {
    match *m.shape() {
        [n, c] => (n, c),
        _ => panic!("expected a [N, C] matrix, got {:?}", m.shape()),
    }
}

pub fn auc_summary<S: Scalar>(scores: &Tensor<S>, truth: &Tensor<S>) -> AucSummary {
    assert_eq!(
        scores.shape(),
        truth.shape(),
        "scores and truth differ in shape"
    );
    let (n, c) = columns(scores);
    let s: Vec<f64> = scores.data().iter().map(|v| v.f64()).collect();
    let t: Vec<bool> = truth.data().iter().map(|&v| v > S::of(0.5)).collect();
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| s[i * c + j]).collect();
            let lab: Vec<bool> = (0..n).map(|i| t[i * c + j]).collect();
            roc_auc(&col, &lab)
        })
        .collect();
    let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
    let skipped = c - valid.len();
    if skipped > 0 {
        log::warn!(
            "{skipped} of {c} classes have a single label value and are excluded from macro AUC"
        );
    }
    AucSummary {
        macro_auc: (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64),
        micro_auc: roc_auc(&s, &t),
        per_class,
        skipped,
    }
}

/// Mean per-clip F1 between thresholded predictions and truth.
///
/// An empty prediction matching an empty truth scores 1; exactly one empty
/// side scores 0.
pub fn instance_f1<S: Scalar>(
    scores: &Tensor<S>,
    truth: &Tensor<S>,
    threshold: f64,
) -> Result<f64, TrainError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(TrainError::Invalid(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    assert_eq!(
        scores.shape(),
        truth.shape(),
        "scores and truth differ in shape"
    );
    let (n, c) = columns(scores);
    let mut total = 0.0;
    for i in 0..n {
        let (mut tp, mut pred, mut pos) = (0usize, 0usize, 0usize);
        for j in 0..c {
            let p = scores.data()[i * c + j].f64() >= threshold;
            let t = truth.data()[i * c + j] > S::of(0.5);
            tp += (p && t) as usize;
            pred += p as usize;
            pos += t as usize;
        }
        total += match (pred, pos) {
            (0, 0) => 1.0,
            (0, _) | (_, 0) => 0.0,
            _ => {
                let (precision, recall) = (tp as f64 / pred as f64, tp as f64 / pos as f64);
                if tp == 0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                }
            }
        };
    }
    Ok(total / n as f64)
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy<S: Scalar>(scores: &Tensor<S>, classes: &[usize]) -> f64 {
    let (n, c) = columns(scores);
    assert_eq!(n, classes.len(), "one class per row expected");
    let hits = scores
        .data()
        .chunks(c)
        .zip(classes)
        .filter(|(row, &k)| argmax(row) == k)
        .count();
    hits as f64 / n as f64
}

/// Mean binary cross-entropy of probabilities, clamped away from 0 and 1.
pub fn bce_of_probs<S: Scalar>(probs: &Tensor<S>, truth: &Tensor<S>) -> f64 {
    let total: f64 = probs
        .data()
        .iter()
        .zip(truth.data())
        .map(|(&p, &t)| {
            let p = p.f64().clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            if t > S::of(0.5) {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / probs.len() as f64
}

/// Mean negative log-probability of the true class.
pub fn nll_of_probs<S: Scalar>(probs: &Tensor<S>, classes: &[usize]) -> f64 {
    let (_, c) = columns(probs);
    let total: f64 = probs
        .data()
        .chunks(c)
        .zip(classes)
        .map(|(row, &k)| -row[k].f64().max(PROB_FLOOR).ln())
        .sum();
    total / classes.len() as f64
}

const PROB_FLOOR: f64 = 1e-12;
