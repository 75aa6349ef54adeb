use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::config::{StageMode, TrainConfig, Variant};
use super::history::{EpochRecord, History};
use super::objective::{batch_objective, Objective};
use crate::data::{Dataset, SplitPlan};
use crate::error::{Error, Result};
use crate::gradcore::Tape;
use crate::losses::{cross_entropy, lambda_schedule, siamese_loss};
use crate::metrics::{evaluate, MetricsReport};
use crate::models::{
    check_bag, gene_forward, init_params, main_forward, predict, Bag, GeneLeaves, GeneParams, MainLeaves,
    MainParams, ModelConfig, ParamSet,
};

const SHUFFLE_STREAM: u64 = 11;
const GENE_SHUFFLE_STREAM: u64 = 12;

/// Training and validation bags of one cross-validation run.
#[derive(Debug, Clone)]
pub struct FoldData<'a> {
    pub train: Vec<&'a Bag>,
    pub val: Vec<&'a Bag>,
}

impl<'a> FoldData<'a> {
    pub fn new(dataset: &'a Dataset, plan: &SplitPlan, fold: usize) -> Result<Self> {
        Ok(FoldData {
            train: dataset.select(&plan.fold_train(fold)?)?,
            val: dataset.select(&plan.fold_val(fold)?)?,
        })
    }

    fn check(&self) -> Result<()> {
        if self.train.is_empty() || self.val.is_empty() {
            return Err(Error::Data("fold has an empty training or validation part".into()));
        }
        Ok(())
    }
}

/// Model shape for `dataset` under `variant`: widths come from the data,
/// prompts are disabled unless the variant uses them.
pub fn model_config_for(dataset: &Dataset, template: &ModelConfig, variant: Variant) -> ModelConfig {
    let prompts = variant.components().prompts;
    ModelConfig {
        d: dataset.instance_dim(),
        gene_dim: dataset.gene_dim().max(1),
        num_subtypes: dataset.num_subtypes,
        num_domains: dataset.num_domains,
        n_prompts: if prompts { template.n_prompts } else { 0 },
        ..template.clone()
    }
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Early stopping on a metric where larger is better.
#[derive(Debug, Clone)]
struct EarlyStop<P> {
    patience: usize,
    best: Option<(f64, P, usize)>,
    since_best: usize,
}

impl<P: Clone> EarlyStop<P> {
    fn new(patience: usize) -> Self {
        EarlyStop {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records an epoch; returns `true` when training should stop.
    fn observe(&mut self, score: f64, params: &P, record: usize) -> bool {
        let improved = match &self.best {
            None => true,
            Some((b, _, _)) => score > *b,
        };
        if improved {
            self.best = Some((score, params.clone(), record));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best >= self.patience
    }

    fn into_best(self) -> Option<(f64, P, usize)> {
        self.best
    }
}

// ---------------------------------------------------------------------------
// Gene branch

#[derive(Debug, Clone)]
pub struct GenePretrainOutcome {
    /// Best-validation parameters, frozen.
    pub params: GeneParams,
    pub val_acc: f64,
    pub epochs_run: usize,
}

fn gene_vector<'b>(bag: &'b Bag) -> Result<&'b [f64]> {
    bag.genes
        .as_deref()
        .ok_or_else(|| Error::Data(format!("bag `{}` has no gene vector", bag.id)))
}

fn gene_accuracy(params: &GeneParams, bags: &[&Bag]) -> Result<f64> {
    let mut tape = Tape::new();
    let leaves = GeneLeaves::register(&mut tape, params, false);
    let mut correct = 0;
    for bag in bags {
        let out = gene_forward(&mut tape, &leaves, gene_vector(bag)?)?;
        if tape.value(out.logits).argmax_row(0) == bag.subtype {
            correct += 1;
        }
    }
    Ok(correct as f64 / bags.len() as f64)
}

/// Trains the gene encoder and its subtype classifier with cross-entropy on
/// the fold's training bags, early-stopping on validation accuracy, and
/// returns the best parameters frozen.
pub fn pretrain_gene(
    fold: &FoldData<'_>,
    model: &ModelConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<GenePretrainOutcome> {
    config.validate()?;
    fold.check()?;
    for bag in fold.train.iter().chain(&fold.val) {
        gene_vector(bag)?;
    }
    let (_, mut params) = init_params(model, seed)?;
    let adam = config.gene_adam();
    let mut state = AdamState::new();
    let mut rng = stream_rng(seed, GENE_SHUFFLE_STREAM);
    let mut stop = EarlyStop::new(config.patience);
    let mut epochs_run = 0;
    for epoch in 0..config.gene_max_epochs {
        epochs_run += 1;
        let order = shuffled(fold.train.len(), &mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let leaves = GeneLeaves::register(&mut tape, &params, true);
            let mut terms = Vec::with_capacity(batch.len());
            for &i in batch {
                let bag = fold.train[i];
                let out = gene_forward(&mut tape, &leaves, gene_vector(bag)?)?;
                terms.push(cross_entropy(&mut tape, out.logits, bag.subtype)?);
            }
            let loss = crate::losses::batch_mean(&mut tape, &terms)?;
            tape.backward(loss)?;
            let grads = leaves.gradients(&tape);
            adam_step(&mut params, &grads, &mut state, &adam, |_| true)?;
        }
        let acc = gene_accuracy(&params, &fold.val)?;
        debug!("gene epoch {epoch}: val acc {acc:.4}");
        if stop.observe(acc, &params, epoch) {
            break;
        }
    }
    let (val_acc, mut best, _) = stop.into_best().expect("at least one epoch");
    best.freeze();
    info!("gene branch pretrained: val acc {val_acc:.4} after {epochs_run} epochs");
    Ok(GenePretrainOutcome {
        params: best,
        val_acc,
        epochs_run,
    })
}

// ---------------------------------------------------------------------------
// Main branch

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation checkpoint.
    pub params: MainParams,
    pub history: History,
}

#[derive(Debug, Clone, Copy, Default)]
struct EpochLosses {
    l_s: Option<f64>,
    l_y: Option<f64>,
    l_d: Option<f64>,
    l_tot: f64,
}

struct Stage<'s, 'a> {
    fold: &'s FoldData<'a>,
    gene: Option<&'s GeneParams>,
    objective: Objective,
    adam: AdamConfig,
    batch_size: usize,
}

impl Stage<'_, '_> {
    fn epoch(
        &self,
        params: &mut MainParams,
        state: &mut AdamState,
        rng: &mut ChaCha8Rng,
        lambda_p: f64,
    ) -> Result<EpochLosses> {
        let order = shuffled(self.fold.train.len(), rng);
        let mut sums = [0.0f64; 4];
        let mut present = [false; 3];
        for batch in order.chunks(self.batch_size) {
            let bags: Vec<&Bag> = batch.iter().map(|&i| self.fold.train[i]).collect();
            let mut tape = Tape::new();
            let main = MainLeaves::register(&mut tape, params);
            let gene = self.gene.map(|g| GeneLeaves::register(&mut tape, g, false));
            let terms = batch_objective(&mut tape, &main, gene.as_ref(), &bags, &self.objective, lambda_p)?;
            tape.backward(terms.total)?;
            let grads = main.gradients(&tape);
            let objective = self.objective;
            adam_step(params, &grads, state, &self.adam, |n| objective.is_active(n))?;

            let w = bags.len() as f64;
            for (k, node) in [terms.siamese, terms.label, terms.domain].into_iter().enumerate() {
                if let Some(node) = node {
                    present[k] = true;
                    sums[k] += w * tape.value(node).item();
                }
            }
            sums[3] += w * tape.value(terms.total).item();
        }
        let n = self.fold.train.len() as f64;
        let avg = |k: usize| present[k].then(|| sums[k] / n);
        Ok(EpochLosses {
            l_s: avg(0),
            l_y: avg(1),
            l_d: avg(2),
            l_tot: sums[3] / n,
        })
    }
}

fn validation_metrics(params: &MainParams, bags: &[&Bag]) -> Result<(f64, f64)> {
    let report = evaluate_bags(params, bags, false)?;
    Ok((report.rocauc, report.acc))
}

/// Mean Siamese loss over `bags` (forward only).
fn validation_siamese(params: &MainParams, gene: &GeneParams, bags: &[&Bag]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in bags.chunks(64) {
        let mut tape = Tape::new();
        let main = MainLeaves::register(&mut tape, params);
        let g = GeneLeaves::register(&mut tape, gene, false);
        for bag in chunk {
            let out = main_forward(&mut tape, &main, bag, 0.0)?;
            let z = gene_forward(&mut tape, &g, gene_vector(bag)?)?;
            let l = siamese_loss(&mut tape, out.projection, z.embedding)?;
            total += tape.value(l).item();
        }
    }
    Ok(total / bags.len() as f64)
}

/// Class probabilities of `bags` under `params`, evaluated into a report.
pub fn evaluate_bags(params: &MainParams, bags: &[&Bag], per_domain: bool) -> Result<MetricsReport> {
    let preds = predict(params, bags)?;
    let probs: Vec<Vec<f64>> = preds.iter().map(|p| p.probabilities()).collect();
    let labels: Vec<usize> = bags.iter().map(|b| b.subtype).collect();
    let domains: Vec<usize> = bags.iter().map(|b| b.domain).collect();
    evaluate(&probs, &labels, per_domain.then_some(&domains[..]))
}

fn require_gene<'g>(variant: Variant, gene: Option<&'g GeneParams>) -> Result<Option<&'g GeneParams>> {
    if !variant.components().siamese {
        return Ok(None);
    }
    match gene {
        None => Err(Error::contract(format!("variant `{variant}` needs a pretrained gene branch"))),
        Some(g) if !g.is_frozen() => Err(Error::contract("gene branch must be frozen before main-branch training")),
        Some(g) => Ok(Some(g)),
    }
}

fn prepare(fold: &FoldData<'_>, model: &ModelConfig, config: &TrainConfig, seed: u64) -> Result<MainParams> {
    config.validate()?;
    model.validate()?;
    fold.check()?;
    let (params, _) = init_params(model, seed)?;
    for bag in fold.train.iter().chain(&fold.val) {
        check_bag(bag, &params)?;
    }
    Ok(params)
}

/// Runs `epochs` epochs of `stage`, early-stopping on validation ROC AUC,
/// appending to `history` with epoch numbers offset by `epoch_offset`.
/// Returns the best-validation parameters.
#[allow(clippy::too_many_arguments)]
fn run_adversarial_phase(
    stage: &Stage<'_, '_>,
    mut params: MainParams,
    config: &TrainConfig,
    epochs: usize,
    epoch_offset: usize,
    rng: &mut ChaCha8Rng,
    history: &mut History,
) -> Result<MainParams> {
    let schedule = config.schedule(epochs);
    let mut state = AdamState::new();
    let mut stop = EarlyStop::new(config.patience);
    for e in 0..epochs {
        let lambda_p = lambda_schedule(e, &schedule)?;
        let losses = stage.epoch(&mut params, &mut state, rng, lambda_p)?;
        let (val_rocauc, val_acc) = validation_metrics(&params, &stage.fold.val)?;
        debug!(
            "epoch {}: lambda {lambda_p:.4} loss {:.5} val auc {val_rocauc:.4}",
            epoch_offset + e,
            losses.l_tot
        );
        history.records.push(EpochRecord {
            epoch: epoch_offset + e,
            lambda_p,
            l_s: losses.l_s,
            l_y: losses.l_y,
            l_d: losses.l_d,
            l_tot: losses.l_tot,
            val_rocauc,
            val_acc,
        });
        if stop.observe(val_rocauc, &params, history.records.len() - 1) {
            break;
        }
    }
    let (auc, best, idx) = stop.into_best().expect("at least one epoch");
    history.best = Some(idx);
    info!(
        "best validation ROC AUC {auc:.4} at epoch {} of {}",
        history.records[idx].epoch,
        history.records.len()
    );
    Ok(best)
}

/// Joint optimisation of every term the variant enables, with the
/// adversarial weight following the warm-up schedule over `max_epochs`.
pub fn train_one_stage(
    fold: &FoldData<'_>,
    gene: Option<&GeneParams>,
    model: &ModelConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let gene = require_gene(config.variant, gene)?;
    let params = prepare(fold, model, config, seed)?;
    let stage = Stage {
        fold,
        gene,
        objective: Objective::one_stage(config.variant.components()),
        adam: config.adam(),
        batch_size: config.batch_size,
    };
    let mut rng = stream_rng(seed, SHUFFLE_STREAM);
    let mut history = History::default();
    let params = run_adversarial_phase(&stage, params, config, config.max_epochs, 0, &mut rng, &mut history)?;
    Ok(TrainOutcome { params, history })
}

/// Siamese alignment for half the budget (early-stopped on validation
/// `L_S`), then the label and domain objective without the gene branch,
/// with the schedule restarted for the remaining epochs.
pub fn train_two_stage(
    fold: &FoldData<'_>,
    gene: Option<&GeneParams>,
    model: &ModelConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let c = config.variant.components();
    let gene = require_gene(config.variant, gene)?;
    let Some(gene) = gene else {
        warn!("variant `{}` has no Siamese term; two-stage training reduces to one stage", config.variant);
        return train_one_stage(fold, None, model, config, seed);
    };
    let mut params = prepare(fold, model, config, seed)?;
    let mut rng = stream_rng(seed, SHUFFLE_STREAM);
    let mut history = History::default();

    let phase_a = config.max_epochs / 2;
    let stage_a = Stage {
        fold,
        gene: Some(gene),
        objective: Objective::SIAMESE_ONLY,
        adam: config.adam(),
        batch_size: config.batch_size,
    };
    let mut state = AdamState::new();
    let mut stop = EarlyStop::new(config.patience);
    for e in 0..phase_a {
        let losses = stage_a.epoch(&mut params, &mut state, &mut rng, 0.0)?;
        let val_ls = validation_siamese(&params, gene, &fold.val)?;
        let (val_rocauc, val_acc) = validation_metrics(&params, &fold.val)?;
        debug!("phase A epoch {e}: L_S {:.5} val L_S {val_ls:.5}", losses.l_tot);
        history.records.push(EpochRecord {
            epoch: e,
            lambda_p: 0.0,
            l_s: losses.l_s,
            l_y: None,
            l_d: None,
            l_tot: losses.l_tot,
            val_rocauc,
            val_acc,
        });
        if stop.observe(-val_ls, &params, e) {
            break;
        }
    }
    let offset = history.records.len();
    if let Some((neg_ls, best, idx)) = stop.into_best() {
        info!("phase A best validation L_S {:.5} at epoch {idx}", -neg_ls);
        params = best;
    }

    let stage_b = Stage {
        fold,
        gene: None,
        objective: Objective::adversarial(c.dann),
        adam: config.adam(),
        batch_size: config.batch_size,
    };
    let budget = config.max_epochs - phase_a;
    let params = run_adversarial_phase(&stage_b, params, config, budget, offset, &mut rng, &mut history)?;
    Ok(TrainOutcome { params, history })
}

/// Main-branch training in the configured stage mode.
pub fn train_main(
    fold: &FoldData<'_>,
    gene: Option<&GeneParams>,
    model: &ModelConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    match config.stage {
        StageMode::OneStage => train_one_stage(fold, gene, model, config, seed),
        StageMode::TwoStage => train_two_stage(fold, gene, model, config, seed),
    }
}
