use bagforge::metrics::{accuracy_f1, average_precision, binary_roc_auc, pr_auc_macro, roc_auc_macro_ovr};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::oracles::{instance, pairwise_auc, sweep_ap};

#[test]
fn roc_auc_matches_pairwise_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let (s, p) = instance(&mut rng);
        let got = binary_roc_auc(&s, &p).unwrap();
        assert!((got - pairwise_auc(&s, &p)).abs() < 1e-9);
    }
}

#[test]
fn average_precision_matches_threshold_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..500 {
        let (s, p) = instance(&mut rng);
        let got = average_precision(&s, &p).unwrap();
        assert!((got - sweep_ap(&s, &p)).abs() < 1e-9, "{s:?} {p:?}");
    }
}

#[test]
fn macro_scores_match_per_class_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n = rng.random_range(8..=50);
        let c = 4;
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let r: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 1e-3).collect();
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let present: Vec<usize> = (0..c).filter(|k| labels.contains(k)).collect();
        if present.len() < 2 {
            continue;
        }
        let mut auc = 0.0;
        let mut ap = 0.0;
        for &k in &present {
            let s: Vec<f64> = probs.iter().map(|r| r[k]).collect();
            let p: Vec<bool> = labels.iter().map(|l| *l == k).collect();
            auc += pairwise_auc(&s, &p);
            ap += sweep_ap(&s, &p);
        }
        let m = present.len() as f64;
        assert!((roc_auc_macro_ovr(&probs, &labels).unwrap() - auc / m).abs() < 1e-9);
        assert!((pr_auc_macro(&probs, &labels).unwrap() - ap / m).abs() < 1e-9);
    }
}

#[test]
fn perfect_and_reversed_rankings() {
    let s = [0.1, 0.2, 0.8, 0.9];
    let p = [false, false, true, true];
    assert_eq!(binary_roc_auc(&s, &p).unwrap(), 1.0);
    assert_eq!(average_precision(&s, &p).unwrap(), 1.0);
    let q = [true, true, false, false];
    assert_eq!(binary_roc_auc(&s, &q).unwrap(), 0.0);
    assert!(binary_roc_auc(&s, &[true; 4]).is_err());
}

#[test]
fn macro_f1_by_hand() {
    // class 0: tp 1 fp 1 fn 1 -> 0.5; class 1: tp 1 fp 1 fn 1 -> 0.5; class 2 absent and never predicted.
    let s = accuracy_f1(&[0, 1, 1, 0], &[0, 0, 1, 1], 3).unwrap();
    assert_eq!(s.acc, 0.5);
    assert!((s.f1_macro - 0.5).abs() < 1e-15);
    assert_eq!(s.confusion[0], vec![1, 1, 0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ranking_metrics_invariant_under_monotone_maps(seed in any::<u64>(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, p) = instance(&mut rng);
        let t: Vec<f64> = s.iter().map(|x| a * x + b + (a * x).exp()).collect();
        prop_assert!((binary_roc_auc(&s, &p).unwrap() - binary_roc_auc(&t, &p).unwrap()).abs() < 1e-12);
        prop_assert!((average_precision(&s, &p).unwrap() - average_precision(&t, &p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn metrics_lie_in_unit_interval(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, p) = instance(&mut rng);
        let auc = binary_roc_auc(&s, &p).unwrap();
        let ap = average_precision(&s, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&auc));
        prop_assert!(ap > 0.0 && ap <= 1.0);
    }
}
