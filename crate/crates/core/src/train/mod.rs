//! Optimisation: Adam, gene-branch pretraining, the one- and two-stage
//! main-branch loops with early stopping, and the cross-validation driver.

pub mod adam;
mod config;
mod cv;
mod history;
mod loops;
mod objective;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use config::{Components, StageMode, TrainConfig, Variant};
pub use cv::{
    comparison_table, run_cv, run_fold, train_ablation, CvReport, CvSummary, FoldMetrics, FoldResult, MeanStd,
    MetricSummary,
};
pub use history::{EpochRecord, History, HISTORY_HEADER};
pub use loops::{
    evaluate_bags, model_config_for, pretrain_gene, train_main, train_one_stage, train_two_stage, FoldData,
    GenePretrainOutcome, TrainOutcome,
};
pub use objective::{batch_objective, BatchTerms, Objective};
