use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::{StageMode, TrainConfig, Variant};
use super::history::History;
use super::loops::{evaluate_bags, model_config_for, pretrain_gene, train_main, FoldData};
use crate::data::{Dataset, SplitPlan};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::models::{GeneParams, MainParams, ModelConfig};

/// Everything produced by one cross-validation run.
#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    /// Seed of this run: the configured seed plus the fold index.
    pub seed: u64,
    pub model: ModelConfig,
    pub main: MainParams,
    pub gene: Option<GeneParams>,
    pub gene_val_acc: Option<f64>,
    pub history: History,
    pub val: MetricsReport,
    pub test: MetricsReport,
}

/// Pretrains the gene branch when the variant needs it, trains the main
/// branch, and evaluates on the fold's validation part and the test set.
pub fn run_fold(
    dataset: &Dataset,
    plan: &SplitPlan,
    fold: usize,
    template: &ModelConfig,
    config: &TrainConfig,
) -> Result<FoldResult> {
    let data = FoldData::new(dataset, plan, fold)?;
    let test = dataset.select(&plan.test_ids)?;
    let model = model_config_for(dataset, template, config.variant);
    let seed = config.seed.wrapping_add(fold as u64);
    info!("fold {fold}: variant {} ({} stage), seed {seed}", config.variant, config.stage);

    let pre = if config.variant.components().siamese {
        Some(pretrain_gene(&data, &model, config, seed)?)
    } else {
        None
    };
    let gene = pre.as_ref().map(|p| &p.params);
    let outcome = train_main(&data, gene, &model, config, seed)?;
    let val = evaluate_bags(&outcome.params, &data.val, true)?;
    let test = evaluate_bags(&outcome.params, &test, true)?;
    info!("fold {fold}: val ROC AUC {:.4}, test ROC AUC {:.4}", val.rocauc, test.rocauc);
    Ok(FoldResult {
        fold,
        seed,
        model,
        main: outcome.params,
        gene_val_acc: pre.as_ref().map(|p| p.val_acc),
        gene: pre.map(|p| p.params),
        history: outcome.history,
        val,
        test,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator); 0 for one value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub rocauc: MeanStd,
    pub prauc: MeanStd,
    pub acc: MeanStd,
    pub f1: MeanStd,
}

impl MetricSummary {
    pub fn of<'r>(reports: impl Iterator<Item = &'r MetricsReport> + Clone) -> Self {
        let col = |f: fn(&MetricsReport) -> f64| MeanStd::of(&reports.clone().map(f).collect::<Vec<_>>());
        MetricSummary {
            rocauc: col(|r| r.rocauc),
            prauc: col(|r| r.prauc),
            acc: col(|r| r.acc),
            f1: col(|r| r.f1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub gene_val_acc: Option<f64>,
    pub val: MetricsReport,
    pub test: MetricsReport,
}

/// Serializable part of a cross-validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub variant: Variant,
    pub stage: StageMode,
    pub folds: Vec<FoldMetrics>,
    pub val: MetricSummary,
    pub test: MetricSummary,
}

#[derive(Debug, Clone)]
pub struct CvReport {
    pub variant: Variant,
    pub stage: StageMode,
    pub folds: Vec<FoldResult>,
}

impl CvReport {
    pub fn summary(&self) -> CvSummary {
        CvSummary {
            variant: self.variant,
            stage: self.stage,
            folds: self
                .folds
                .iter()
                .map(|f| FoldMetrics {
                    fold: f.fold,
                    seed: f.seed,
                    best_epoch: f.history.best_record().map(|r| r.epoch),
                    epochs_run: f.history.records.len(),
                    gene_val_acc: f.gene_val_acc,
                    val: f.val.clone(),
                    test: f.test.clone(),
                })
                .collect(),
            val: MetricSummary::of(self.folds.iter().map(|f| &f.val)),
            test: MetricSummary::of(self.folds.iter().map(|f| &f.test)),
        }
    }
}

/// Runs `folds` (every fold of `plan` when `None`), using up to
/// `parallel_folds` worker threads. Each run is seeded independently, so the
/// result does not depend on the degree of parallelism.
pub fn run_cv(
    dataset: &Dataset,
    plan: &SplitPlan,
    template: &ModelConfig,
    config: &TrainConfig,
    folds: Option<&[usize]>,
    parallel_folds: usize,
) -> Result<CvReport> {
    config.validate()?;
    plan.validate(dataset)?;
    let all: Vec<usize> = (0..plan.num_folds()).collect();
    let folds = folds.unwrap_or(&all);
    if folds.is_empty() {
        return Err(Error::contract("no folds to run"));
    }
    let workers = parallel_folds.clamp(1, folds.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<BTreeMap<usize, Result<FoldResult>>> = Mutex::new(BTreeMap::new());
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&fold) = folds.get(i) else { break };
        let r = run_fold(dataset, plan, fold, template, config);
        results.lock().expect("worker panicked").insert(i, r);
    };
    if workers == 1 {
        work();
    } else {
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    let folds = results
        .into_inner()
        .expect("worker panicked")
        .into_values()
        .collect::<Result<Vec<_>>>()?;
    Ok(CvReport {
        variant: config.variant,
        stage: config.stage,
        folds,
    })
}

/// Cross-validation of one ablation variant.
pub fn train_ablation(
    variant: Variant,
    dataset: &Dataset,
    plan: &SplitPlan,
    template: &ModelConfig,
    config: &TrainConfig,
    folds: Option<&[usize]>,
    parallel_folds: usize,
) -> Result<CvReport> {
    let config = TrainConfig {
        variant,
        ..config.clone()
    };
    run_cv(dataset, plan, template, &config, folds, parallel_folds)
}

fn pct(m: &MeanStd) -> String {
    format!("{:.1}±{:.2}", 100.0 * m.mean, 100.0 * m.std)
}

/// Comparison table of several runs, metrics in percent as mean±std over folds.
pub fn comparison_table(rows: &[CvSummary], use_test: bool) -> String {
    let mut out = String::new();
    let split = if use_test { "test" } else { "validation" };
    writeln!(out, "| variant | stage | ROCAUC ({split}) | PRAUC | ACC | F1 |").unwrap();
    writeln!(out, "|---|---|---|---|---|---|").unwrap();
    for r in rows {
        let m = if use_test { &r.test } else { &r.val };
        writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            r.variant,
            r.stage,
            pct(&m.rocauc),
            pct(&m.prauc),
            pct(&m.acc),
            pct(&m.f1)
        )
        .unwrap();
    }
    out
}
