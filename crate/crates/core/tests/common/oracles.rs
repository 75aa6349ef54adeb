//! Brute-force references for the ranking metrics.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
pub fn pairwise_auc(scores: &[f64], pos: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if pos[i] && !pos[j] {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// Step-wise area under the precision-recall curve, visiting every distinct
/// threshold from high to low and counting everything at or above it.
pub fn sweep_ap(scores: &[f64], pos: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let total_pos = pos.iter().filter(|p| **p).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let selected: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = selected.iter().filter(|&&i| pos[i]).count() as f64;
        let recall = tp / total_pos;
        let precision = tp / selected.len() as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Random scored labels with both classes present; scores are coarse so ties occur.
pub fn instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    loop {
        let n = rng.random_range(2..=50);
        let levels = rng.random_range(2..=20) as f64;
        let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * levels).floor() / levels).collect();
        let pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if pos.iter().any(|p| *p) && pos.iter().any(|p| !*p) {
            return (scores, pos);
        }
    }
}
