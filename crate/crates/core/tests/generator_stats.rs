mod common;

use bagforge::data::{generate, GenConfig, SplitPlan, SUBTYPE_COUNTS};
use bagforge::metrics::domain_leakage_probe;
use bagforge::train::{run_fold, MeanStd, TrainConfig, Variant};
use common::{tiny_gen, tiny_model, tiny_train};

fn chi_square(observed: &[usize], expected: &[f64]) -> f64 {
    observed.iter().zip(expected).map(|(&o, &e)| (o as f64 - e).powi(2) / e).sum()
}

#[test]
fn marginals_match_configured_weights() {
    // Critical values at p = 0.01 for 3 and 7 degrees of freedom.
    const CHI2_DF3: f64 = 11.345;
    const CHI2_DF7: f64 = 18.475;
    let n = 5000;
    for seed in [1, 2, 3] {
        let ds = generate(&GenConfig {
            num_samples: n,
            d: 4,
            gene_dim: 2,
            bag_size_range: [1, 2],
            seed,
            ..GenConfig::default()
        })
        .unwrap();
        let mut subtypes = [0usize; 4];
        let mut domains = [0usize; 8];
        for b in &ds.bags {
            subtypes[b.subtype] += 1;
            domains[b.domain] += 1;
        }
        let total: f64 = SUBTYPE_COUNTS.iter().sum();
        let expected: Vec<f64> = SUBTYPE_COUNTS.iter().map(|c| c / total * n as f64).collect();
        let chi_t = chi_square(&subtypes, &expected);
        let chi_o = chi_square(&domains, &[n as f64 / 8.0; 8]);
        assert!(chi_t < CHI2_DF3, "seed {seed}: subtype chi2 {chi_t:.2} for {subtypes:?}");
        assert!(chi_o < CHI2_DF7, "seed {seed}: domain chi2 {chi_o:.2} for {domains:?}");
    }
}

#[test]
fn no_subtype_signal_means_chance_auc() {
    let mut aucs = Vec::new();
    for seed in 0..5 {
        let ds = generate(&GenConfig {
            num_samples: 600,
            subtype_signal: 0.0,
            ..tiny_gen(200 + seed)
        })
        .unwrap();
        let plan = SplitPlan::new(&ds, 0.15, 5, seed).unwrap();
        let cfg = TrainConfig {
            variant: Variant::Baseline,
            ..tiny_train(seed)
        };
        aucs.push(run_fold(&ds, &plan, 0, &tiny_model(), &cfg).unwrap().test.rocauc);
    }
    let m = MeanStd::of(&aucs);
    assert!((m.mean - 0.5).abs() < 0.05, "{aucs:?}");
}

#[test]
fn no_domain_signal_means_chance_probe() {
    let domains = 8;
    for seed in 0..3 {
        let ds = generate(&GenConfig {
            num_samples: 2000,
            num_domains: domains,
            domain_signal: 0.0,
            ..tiny_gen(300 + seed)
        })
        .unwrap();
        let means: Vec<Vec<f64>> = ds
            .bags
            .iter()
            .map(|b| {
                let (n, d) = b.instances.shape();
                (0..d).map(|c| (0..n).map(|r| b.instances.get(r, c)).sum::<f64>() / n as f64).collect()
            })
            .collect();
        let labels: Vec<usize> = ds.bags.iter().map(|b| b.domain).collect();
        let acc = domain_leakage_probe(&means, &labels, domains, seed).unwrap();
        assert!((acc - 1.0 / domains as f64).abs() < 0.05, "seed {seed}: probe accuracy {acc}");

        let with_domain = generate(&GenConfig {
            domain_signal: 1.0,
            ..ds.gen_config.clone().unwrap()
        })
        .unwrap();
        let means: Vec<Vec<f64>> = with_domain
            .bags
            .iter()
            .map(|b| {
                let (n, d) = b.instances.shape();
                (0..d).map(|c| (0..n).map(|r| b.instances.get(r, c)).sum::<f64>() / n as f64).collect()
            })
            .collect();
        let acc = domain_leakage_probe(&means, &labels, domains, seed).unwrap();
        assert!(acc > 0.5, "seed {seed}: probe accuracy {acc} with domain signal");
    }
}
