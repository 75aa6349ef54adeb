#![allow(dead_code)]

pub mod oracles;

use std::collections::{BTreeMap, BTreeSet};

use bagforge::data::{generate, Dataset, GenConfig, SplitPlan};
use bagforge::models::ModelConfig;
use bagforge::train::TrainConfig;

/// A cohort small enough to train in well under a second per epoch.
pub fn tiny_gen(seed: u64) -> GenConfig {
    GenConfig {
        num_samples: 160,
        num_domains: 3,
        d: 12,
        gene_dim: 6,
        emb: 8,
        bag_size_range: [3, 8],
        subtype_signal: 2.0,
        domain_signal: 1.0,
        seed,
        ..GenConfig::default()
    }
}

pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        n_prompts: 2,
        emb: 8,
        hidden_att: 6,
        ..ModelConfig::default()
    }
}

pub fn tiny_train(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 2e-3,
        gene_lr: 5e-3,
        max_epochs: 8,
        gene_max_epochs: 8,
        patience: 3,
        seed,
        ..TrainConfig::default()
    }
}

pub fn tiny_setup(seed: u64) -> (Dataset, SplitPlan) {
    let ds = generate(&tiny_gen(seed)).unwrap();
    let plan = SplitPlan::new(&ds, 0.15, 5, seed).unwrap();
    (ds, plan)
}

pub fn strata(ds: &Dataset, ids: &[String]) -> BTreeMap<(usize, usize), usize> {
    let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let mut out = BTreeMap::new();
    for b in &ds.bags {
        if wanted.contains(b.id.as_str()) {
            *out.entry((b.subtype, b.domain)).or_insert(0) += 1;
        }
    }
    out
}

/// Checks disjointness, coverage and per-stratum balance of a plan.
pub fn check_plan(ds: &Dataset, plan: &SplitPlan, fraction: f64) {
    plan.validate(ds).unwrap();
    let all: Vec<String> = ds.bags.iter().map(|b| b.id.clone()).collect();
    assert_eq!(plan.test_ids.len(), (fraction * ds.len() as f64).round() as usize);

    let total = strata(ds, &all);
    let test = strata(ds, &plan.test_ids);
    for (s, n) in &total {
        let t = *test.get(s).unwrap_or(&0) as f64;
        assert!((t - fraction * *n as f64).abs() < 1.0, "stratum {s:?}: {t} of {n}");
    }

    let k = plan.num_folds();
    let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    let fold_strata: Vec<_> = plan.folds.iter().map(|f| strata(ds, f)).collect();
    for s in strata(ds, &plan.train_ids()).keys() {
        let counts: Vec<usize> = fold_strata.iter().map(|f| *f.get(s).unwrap_or(&0)).collect();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "stratum {s:?} fold counts {counts:?} over {k} folds");
    }
}

