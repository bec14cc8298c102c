//! Binary classification metrics with class 1 as the positive class.

use std::cmp::Ordering;

use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub auc: f64,
    pub recall: f64,
    pub precision: f64,
    /// Set when only one class is present and the AUC defaulted to 0.5.
    pub auc_undefined: bool,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Area under the ROC curve from midranks (Mann-Whitney U). Ties between a
/// positive and a negative count one half. `None` when a class is missing.
pub fn auc_rank(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // doubled ranks keep midranks integral
    let mut rank2_sum_pos: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u64;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank2_sum_pos += mid2;
            }
        }
        i = j + 1;
    }
    let u2 = rank2_sum_pos - (n_pos * (n_pos + 1)) as u64;
    Some(u2 as f64 / 2.0 / (n_pos * n_neg) as f64)
}

/// Accuracy at the 0.5 threshold (ties to class 0), AUC, recall and
/// precision. Undefined ratios are 0; a single-class label set yields an
/// AUC of 0.5 with `auc_undefined` set.
pub fn compute_metrics(scores: &[f64], labels: &[u8]) -> Result<Metrics> {
    if scores.len() != labels.len() {
        return contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        ));
    }
    if scores.is_empty() {
        return contract("metrics of an empty set");
    }
    if labels.iter().any(|&l| l > 1) {
        return contract("labels must be 0 or 1");
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > 0.5, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let auc = auc_rank(scores, labels);
    Ok(Metrics {
        accuracy: ratio(tp + tn, scores.len()),
        auc: auc.unwrap_or(0.5),
        recall: ratio(tp, tp + fn_),
        precision: ratio(tp, tp + fp),
        auc_undefined: auc.is_none(),
    })
}
