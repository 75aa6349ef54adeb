//! Post-hoc linear probe measuring how much origin information an embedding
//! still carries.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const PROBE_EPOCHS: usize = 300;
const PROBE_LR: f64 = 0.05;
const PROBE_L2: f64 = 1e-4;
const TRAIN_SHARE: f64 = 0.8;

/// Held-out accuracy of a softmax-regression domain classifier trained on
/// 80% of `embeddings` (features standardized on the training part).
pub fn domain_leakage_probe(embeddings: &[Vec<f64>], domains: &[usize], num_domains: usize, seed: u64) -> Result<f64> {
    let n = embeddings.len();
    if n != domains.len() {
        return Err(Error::contract("embeddings and domain labels differ in length"));
    }
    if n < 10 * num_domains {
        return Err(Error::contract(format!(
            "probe needs at least {} samples, got {n}",
            10 * num_domains
        )));
    }
    if let Some(d) = domains.iter().find(|d| **d >= num_domains) {
        return Err(Error::contract(format!("domain label {d} out of range")));
    }
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::contract("embeddings have unequal widths"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((TRAIN_SHARE * n as f64).round() as usize).clamp(1, n - 1);
    let (train, test) = order.split_at(n_train);

    let mut mean = vec![0.0; dim];
    for &i in train {
        for (m, v) in mean.iter_mut().zip(&embeddings[i]) {
            *m += v / n_train as f64;
        }
    }
    let mut std = vec![0.0; dim];
    for &i in train {
        for j in 0..dim {
            std[j] += (embeddings[i][j] - mean[j]).powi(2) / n_train as f64;
        }
    }
    let std: Vec<f64> = std.into_iter().map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 }).collect();
    let features = |i: usize| -> Vec<f64> {
        (0..dim).map(|j| (embeddings[i][j] - mean[j]) / std[j]).collect()
    };
    let x_train: Vec<Vec<f64>> = train.iter().map(|&i| features(i)).collect();

    // W: dim x classes, b: classes; full-batch Adam on mean cross-entropy.
    let k = num_domains;
    let mut w = vec![0.0; dim * k];
    let mut b = vec![0.0; k];
    let mut m_w = vec![0.0; dim * k];
    let mut v_w = vec![0.0; dim * k];
    let mut m_b = vec![0.0; k];
    let mut v_b = vec![0.0; k];
    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    for step in 1..=PROBE_EPOCHS {
        let mut g_w = vec![0.0; dim * k];
        let mut g_b = vec![0.0; k];
        for (x, &i) in x_train.iter().zip(train) {
            let p = softmax_scores(x, &w, &b, k);
            for c in 0..k {
                let err = (p[c] - (domains[i] == c) as u8 as f64) / n_train as f64;
                g_b[c] += err;
                for j in 0..dim {
                    g_w[j * k + c] += err * x[j];
                }
            }
        }
        for (g, wv) in g_w.iter_mut().zip(&w) {
            *g += PROBE_L2 * wv;
        }
        let bc1 = 1.0 - b1.powi(step as i32);
        let bc2 = 1.0 - b2.powi(step as i32);
        for ((p, g), (m, v)) in w.iter_mut().zip(&g_w).zip(m_w.iter_mut().zip(v_w.iter_mut())) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= PROBE_LR * (*m / bc1) / ((*v / bc2).sqrt() + eps);
        }
        for ((p, g), (m, v)) in b.iter_mut().zip(&g_b).zip(m_b.iter_mut().zip(v_b.iter_mut())) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= PROBE_LR * (*m / bc1) / ((*v / bc2).sqrt() + eps);
        }
    }

    let correct = test
        .iter()
        .filter(|&&i| {
            let p = softmax_scores(&features(i), &w, &b, k);
            argmax(&p) == domains[i]
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}

fn softmax_scores(x: &[f64], w: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let mut z = b.to_vec();
    for (j, xv) in x.iter().enumerate() {
        let row = &w[j * k..(j + 1) * k];
        for c in 0..k {
            z[c] += xv * row[c];
        }
    }
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
