mod common;

use std::collections::BTreeSet;

use bagforge::gradcore::Tape;
use bagforge::losses::{lambda_schedule, Schedule};
use bagforge::models::{
    init_params, Checkpoint, GeneLeaves, MainLeaves, ParamSet, DOMAIN_GROUP, HEAD_GROUP, LABEL_GROUP,
};
use bagforge::train::*;
use bagforge::Error;
use common::*;

fn fold0<'a>(ds: &'a bagforge::data::Dataset, plan: &bagforge::data::SplitPlan) -> FoldData<'a> {
    FoldData::new(ds, plan, 0).unwrap()
}

#[test]
fn gene_pretraining_freezes_and_is_deterministic() {
    let (ds, plan) = tiny_setup(1);
    let data = fold0(&ds, &plan);
    let model = model_config_for(&ds, &tiny_model(), Variant::Full);
    let cfg = TrainConfig {
        gene_max_epochs: 30,
        patience: 10,
        ..tiny_train(1)
    };
    let a = pretrain_gene(&data, &model, &cfg, 1).unwrap();
    let b = pretrain_gene(&data, &model, &cfg, 1).unwrap();
    assert!(a.params.is_frozen());
    assert_eq!(a.params, b.params);
    assert!(a.val_acc > 0.9, "gene val acc {}", a.val_acc);

    let mut params = a.params.clone();
    let mut st = AdamState::new();
    let err = adam_step(&mut params, &Default::default(), &mut st, &AdamConfig::default(), |_| true);
    assert!(matches!(err, Err(Error::Contract(_))));
}

#[test]
fn gene_pretraining_needs_gene_vectors() {
    let (mut ds, plan) = tiny_setup(2);
    ds.bags[0].genes = None;
    ds.bags.iter_mut().for_each(|b| b.genes = None);
    let data = fold0(&ds, &plan);
    let model = model_config_for(&ds, &tiny_model(), Variant::Full);
    let err = pretrain_gene(&data, &model, &tiny_train(2), 2).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
}

#[test]
fn one_stage_history_and_early_stopping() {
    let (ds, plan) = tiny_setup(3);
    let data = fold0(&ds, &plan);
    let model = model_config_for(&ds, &tiny_model(), Variant::Full);
    let cfg = TrainConfig {
        max_epochs: 14,
        ..tiny_train(3)
    };
    let gene = pretrain_gene(&data, &model, &cfg, 3).unwrap().params;
    let gene_bytes = Checkpoint::from_gene(&gene).to_bytes().unwrap();
    let out = train_one_stage(&data, Some(&gene), &model, &cfg, 3).unwrap();
    assert_eq!(Checkpoint::from_gene(&gene).to_bytes().unwrap(), gene_bytes);

    let h = &out.history;
    assert!(!h.records.is_empty() && h.records.len() <= cfg.max_epochs);
    let sched = Schedule {
        gamma: cfg.gamma,
        max_epochs: cfg.max_epochs,
    };
    for r in &h.records {
        assert_eq!(r.lambda_p.to_bits(), lambda_schedule(r.epoch, &sched).unwrap().to_bits());
        let (ls, ly, ld) = (r.l_s.unwrap(), r.l_y.unwrap(), r.l_d.unwrap());
        let expect = (1.0 - r.lambda_p) * ls + r.lambda_p * (ly + ld);
        assert!((r.l_tot - expect).abs() < 1e-9);
    }
    let best = h.best_record().unwrap();
    let idx = h.best.unwrap();
    assert!(h.records[idx + 1..].iter().all(|r| r.val_rocauc <= best.val_rocauc));
    assert!(h.records[..idx].iter().all(|r| r.val_rocauc < best.val_rocauc));
    if h.records.len() < cfg.max_epochs {
        assert_eq!(h.records.len() - 1 - idx, cfg.patience);
    }
    let val = evaluate_bags(&out.params, &data.val, false).unwrap();
    assert_eq!(val.rocauc.to_bits(), best.val_rocauc.to_bits());

    let again = train_one_stage(&data, Some(&gene), &model, &cfg, 3).unwrap();
    assert_eq!(again.params, out.params);
    assert_eq!(again.history, out.history);
}

#[test]
fn variant_objectives_are_definitional() {
    let (ds, plan) = tiny_setup(4);
    let data = fold0(&ds, &plan);
    let cfg = TrainConfig {
        max_epochs: 4,
        ..tiny_train(4)
    };
    let base_model = model_config_for(&ds, &tiny_model(), Variant::Baseline);
    assert_eq!(base_model.n_prompts, 0);
    let base = train_main(&data, None, &base_model, &TrainConfig { variant: Variant::Baseline, ..cfg.clone() }, 4).unwrap();
    for r in &base.history.records {
        assert!(r.l_s.is_none() && r.l_d.is_none());
        assert_eq!(r.l_tot, r.l_y.unwrap());
    }

    let model = model_config_for(&ds, &tiny_model(), Variant::Siamese);
    let gene = pretrain_gene(&data, &model, &cfg, 4).unwrap().params;
    let sia = train_main(&data, Some(&gene), &model, &TrainConfig { variant: Variant::Siamese, ..cfg.clone() }, 4).unwrap();
    for r in &sia.history.records {
        assert!(r.l_d.is_none());
        let expect = (1.0 - r.lambda_p) * r.l_s.unwrap() + r.lambda_p * r.l_y.unwrap();
        assert!((r.l_tot - expect).abs() < 1e-9);
    }
    // The untouched domain head is still at its initial value.
    let (init, _) = bagforge::models::init_params(&model, 4).unwrap();
    assert_eq!(sia.params.domain, init.domain);

    let err = train_main(&data, None, &model, &TrainConfig { variant: Variant::Full, ..cfg }, 4).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
    assert!(matches!("+visual".parse::<Variant>(), Err(Error::Contract(_))));
}

#[test]
fn two_stage_phases() {
    let (ds, plan) = tiny_setup(5);
    let data = fold0(&ds, &plan);
    let model = model_config_for(&ds, &tiny_model(), Variant::Full);
    let cfg = TrainConfig {
        max_epochs: 10,
        patience: 20,
        stage: StageMode::TwoStage,
        ..tiny_train(5)
    };
    let gene = pretrain_gene(&data, &model, &cfg, 5).unwrap().params;
    let out = train_two_stage(&data, Some(&gene), &model, &cfg, 5).unwrap();
    let h = &out.history.records;
    assert_eq!(h.len(), 10);
    let sched_b = Schedule {
        gamma: cfg.gamma,
        max_epochs: 5,
    };
    for (i, r) in h.iter().enumerate() {
        assert_eq!(r.epoch, i);
        if i < 5 {
            assert!(r.l_s.is_some() && r.l_y.is_none() && r.l_d.is_none());
            assert_eq!(r.lambda_p, 0.0);
        } else {
            assert!(r.l_s.is_none() && r.l_y.is_some() && r.l_d.is_some());
            assert_eq!(r.lambda_p, lambda_schedule(i - 5, &sched_b).unwrap());
        }
    }
    assert!(out.history.best.unwrap() >= 5);
}

#[test]
fn stage_objectives_reach_only_their_parameters() {
    let (ds, _) = tiny_setup(6);
    let model = model_config_for(&ds, &tiny_model(), Variant::Full);
    let (main, gene) = init_params(&model, 6).unwrap();
    let bags: Vec<_> = ds.bags.iter().take(5).collect();
    let zero = |g: &bagforge::gradcore::Tensor| g.values().iter().all(|v| *v == 0.0);
    let cases = [
        (Objective::SIAMESE_ONLY, [LABEL_GROUP, DOMAIN_GROUP].concat()),
        (Objective::adversarial(true), HEAD_GROUP.to_vec()),
        (Objective::adversarial(false), [HEAD_GROUP, DOMAIN_GROUP].concat()),
        (
            Objective::one_stage(Components { prompts: true, siamese: true, dann: false }),
            DOMAIN_GROUP.to_vec(),
        ),
    ];
    for (obj, unreachable) in cases {
        let mut tape = Tape::new();
        let m = MainLeaves::register(&mut tape, &main);
        let g = GeneLeaves::register(&mut tape, &gene, true);
        let terms = batch_objective(&mut tape, &m, Some(&g), &bags, &obj, 0.4).unwrap();
        tape.backward(terms.total).unwrap();
        let grads = m.gradients(&tape);
        for (name, grad) in &grads {
            let expect_zero = unreachable.contains(&name.as_str());
            assert_eq!(zero(grad), expect_zero, "{obj:?}: {name}");
            assert_eq!(obj.is_active(name), !expect_zero, "{obj:?}: {name}");
        }
        for (name, grad) in g.gradients(&tape) {
            assert!(zero(&grad), "gene parameter {name} received gradient");
        }
    }
}

#[test]
fn cross_validation_report() {
    let (ds, plan) = tiny_setup(7);
    let cfg = TrainConfig {
        max_epochs: 3,
        variant: Variant::Dann,
        ..tiny_train(7)
    };
    let serial = run_cv(&ds, &plan, &tiny_model(), &cfg, None, 1).unwrap();
    assert_eq!(serial.folds.len(), 5);
    let parallel = run_cv(&ds, &plan, &tiny_model(), &cfg, None, 3).unwrap();
    for (a, b) in serial.folds.iter().zip(&parallel.folds) {
        assert_eq!(a.fold, b.fold);
        assert_eq!(a.main, b.main);
        assert_eq!(a.history, b.history);
    }
    let summary = serial.summary();
    let vals: Vec<f64> = serial.folds.iter().map(|f| f.val.rocauc).collect();
    let mean = vals.iter().sum::<f64>() / 5.0;
    let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    assert!((summary.val.rocauc.mean - mean).abs() < 1e-12);
    assert!((summary.val.rocauc.std - std).abs() < 1e-12);

    let test: BTreeSet<&str> = plan.test_ids.iter().map(String::as_str).collect();
    for f in 0..5 {
        for id in plan.fold_train(f).unwrap().iter().chain(&plan.fold_val(f).unwrap()) {
            assert!(!test.contains(id.as_str()));
        }
    }
    let table = comparison_table(&[summary], false);
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains("+dann"));
}

#[test]
fn learns_planted_signal_over_seeds() {
    let mut aucs = Vec::new();
    for seed in 0..5 {
        let (ds, plan) = tiny_setup(100 + seed);
        let cfg = TrainConfig {
            variant: Variant::Baseline,
            max_epochs: 15,
            ..tiny_train(seed)
        };
        aucs.push(run_fold(&ds, &plan, 0, &tiny_model(), &cfg).unwrap().val.rocauc);
    }
    let m = MeanStd::of(&aucs);
    assert!(m.mean - 3.0 * m.std / 5f64.sqrt() > 0.5, "{aucs:?}");
}
