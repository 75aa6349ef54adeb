use log::warn;

use crate::error::{Error, Result};

/// ROC AUC of `scores` for `positive` vs the rest via the Mann-Whitney rank
/// statistic with midranks, which scores tied pairs as one half.
pub fn binary_roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::contract("scores and labels differ in length"));
    }
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("ROC AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie block i..=j shares the mean rank
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if positive[k] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision `Σ (R_k - R_{k-1}) P_k` over thresholds at the distinct
/// scores, highest first.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::contract("scores and labels differ in length"));
    }
    let n_pos = positive.iter().filter(|p| **p).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("average precision needs a positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            if positive[k] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

fn check_scores(scores: &[Vec<f64>], labels: &[usize]) -> Result<usize> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::contract("score rows and labels must be non-empty and equal in length"));
    }
    let classes = scores[0].len();
    for (i, row) in scores.iter().enumerate() {
        if row.len() != classes {
            return Err(Error::contract(format!("score row {i} has {} columns", row.len())));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::contract(format!("score row {i} sums to {s}, not 1")));
        }
    }
    if let Some(l) = labels.iter().find(|l| **l >= classes) {
        return Err(Error::contract(format!("label {l} out of range for {classes} classes")));
    }
    Ok(classes)
}

fn macro_over_classes(
    scores: &[Vec<f64>],
    labels: &[usize],
    name: &str,
    metric: fn(&[f64], &[bool]) -> Result<f64>,
) -> Result<f64> {
    let classes = check_scores(scores, labels)?;
    let mut values = Vec::new();
    for c in 0..classes {
        let positive: Vec<bool> = labels.iter().map(|l| *l == c).collect();
        let n_pos = positive.iter().filter(|p| **p).count();
        if n_pos == 0 {
            warn!("{name}: class {c} absent from labels, skipped");
            continue;
        }
        if n_pos == labels.len() {
            return Err(Error::UndefinedMetric(format!("{name}: all labels are class {c}")));
        }
        let column: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        values.push(metric(&column, &positive)?);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Macro-averaged one-vs-rest ROC AUC over the classes present in `labels`.
pub fn roc_auc_macro_ovr(scores: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    macro_over_classes(scores, labels, "ROC AUC", binary_roc_auc)
}

/// Macro-averaged average precision over the classes present in `labels`.
pub fn pr_auc_macro(scores: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    macro_over_classes(scores, labels, "PR AUC", average_precision)
}
