//! Command-line entry point. Every command writes `manifest-<command>.json`
//! into its output directory, whether it succeeds or fails.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use log::{error, info};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{generate, read_dataset, write_dataset, Dataset, GenConfig, SplitPlan, DEFAULT_FOLDS, DEFAULT_TEST_FRACTION};
use crate::error::{Error, Result};
use crate::gradsuite::{run_suite, SUITE_TOLERANCE};
use crate::metrics::{domain_leakage_probe, pca_2d, write_embeddings_csv, EmbeddingRow};
use crate::models::{predict, Checkpoint, ModelConfig};
use crate::train::{
    comparison_table, evaluate_bags, model_config_for, pretrain_gene, run_cv, train_ablation, CvSummary,
    FoldData, StageMode, TrainConfig, Variant,
};

/// Exit code for malformed command lines.
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub folds: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: DEFAULT_TEST_FRACTION,
            folds: DEFAULT_FOLDS,
        }
    }
}

/// Contents of a `--config` file. `seed` feeds every random stream of a
/// command; nested `seed` fields are overwritten by it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: GenConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Parser)]
#[command(name = "bagforge", version, about = "Genomics-guided domain-adversarial attention MIL on synthetic bags")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "bagforge-out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct Inputs {
    /// Dataset file; generated from the configuration when omitted.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Split plan; derived from the dataset and seed when omitted.
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct Training {
    /// one | two
    #[arg(long)]
    stage: Option<StageMode>,
    /// Run a single fold instead of the full cross-validation.
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long, default_value_t = 1)]
    parallel_folds: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Derive the hold-out split and cross-validation folds of a dataset.
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Pretrain and freeze the gene branch on one fold.
    PretrainGene {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Train the main branch (cross-validated unless --fold is given).
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        training: Training,
        /// baseline | +siamese | +dann | +siamese+dann | +prompts | full
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Evaluate a main-branch checkpoint on the test set (and a fold's validation part).
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Cross-validate every ablation variant and print a comparison table.
    Ablation {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        training: Training,
    },
    /// Finite-difference check of every op and training objective.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Number of random seeds per case.
        #[arg(long, default_value_t = 100)]
        seeds: u64,
    },
    /// Write shared-feature embeddings with PCA coordinates and a domain probe score.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Split { .. } => "split",
            Command::PretrainGene { .. } => "pretrain-gene",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Ablation { .. } => "ablation",
            Command::Gradcheck { .. } => "gradcheck",
            Command::ExportEmbeddings { .. } => "export-embeddings",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::GenData { common }
            | Command::Split { common, .. }
            | Command::PretrainGene { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Ablation { common, .. }
            | Command::Gradcheck { common, .. }
            | Command::ExportEmbeddings { common, .. } => common,
        }
    }
}

#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    argv: Vec<String>,
    config: Option<RunConfig>,
    seed: Option<u64>,
    code_version: &'static str,
    git_describe: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started_unix_secs: u64,
    wall_clock_secs: f64,
    exit_code: i32,
    error: Option<String>,
}

/// Paths touched by a command, recorded in its manifest.
#[derive(Debug, Default)]
struct Run {
    config: Option<RunConfig>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        fs::write(&path, bytes)?;
        self.outputs.push(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, path: PathBuf, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(path, &bytes)
    }
}

fn git_describe() -> String {
    Process::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("BAGFORGE_LOG", "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 for contract and data errors, 2 for
/// I/O and format errors, 64 for usage errors.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };

    let started = Instant::now();
    let started_unix_secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut run = Run::default();
    let command = cli.command;
    let out = command.common().out.clone();
    let result = fs::create_dir_all(&out)
        .map_err(Error::from)
        .and_then(|_| execute(&command, &mut run));
    let (exit_code, message) = match &result {
        Ok(()) => (0, None),
        Err(e) => {
            error!("{} failed: {e}", command.name());
            eprintln!("error: {e}");
            (if e.is_io_or_format() { 2 } else { 1 }, Some(e.to_string()))
        }
    };

    let manifest = RunManifest {
        command: command.name().to_string(),
        argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        seed: run.config.as_ref().map(|c| c.seed),
        config: run.config.take(),
        code_version: env!("CARGO_PKG_VERSION"),
        git_describe: git_describe(),
        inputs: run.inputs,
        outputs: run.outputs,
        started_unix_secs,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        exit_code,
        error: message,
    };
    let path = out.join(format!("manifest-{}.json", command.name()));
    if let Err(e) = serde_json::to_vec_pretty(&manifest)
        .map_err(Error::from)
        .and_then(|b| fs::write(&path, b).map_err(Error::from))
    {
        eprintln!("error: could not write {}: {e}", path.display());
        return if exit_code == 0 { 2 } else { exit_code };
    }
    exit_code
}

fn load_config(common: &Common, run: &mut Run) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(p) => {
            run.inputs.push(p.clone());
            serde_json::from_slice(&fs::read(p)?)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        config.seed = s;
    }
    config.data.seed = config.seed;
    config.train.seed = config.seed;
    run.config = Some(config.clone());
    Ok(config)
}

fn load_dataset(path: Option<&Path>, config: &RunConfig, run: &mut Run) -> Result<Dataset> {
    match path {
        Some(p) => {
            run.inputs.push(p.to_path_buf());
            read_dataset(p)
        }
        None => {
            info!("no --dataset given; generating one from the configuration");
            generate(&config.data)
        }
    }
}

fn load_inputs(inputs: &Inputs, config: &RunConfig, run: &mut Run) -> Result<(Dataset, SplitPlan)> {
    let dataset = load_dataset(inputs.dataset.as_deref(), config, run)?;
    let plan = match &inputs.split {
        Some(p) => {
            run.inputs.push(p.clone());
            SplitPlan::read(p)?
        }
        None => SplitPlan::new(&dataset, config.split.test_fraction, config.split.folds, config.seed)?,
    };
    plan.validate(&dataset)?;
    Ok((dataset, plan))
}

fn apply_training(config: &mut RunConfig, training: &Training, variant: Option<Variant>) {
    if let Some(s) = training.stage {
        config.train.stage = s;
    }
    if let Some(v) = variant {
        config.train.variant = v;
    }
}

fn execute(command: &Command, run: &mut Run) -> Result<()> {
    let common = command.common();
    let out = &common.out;
    let mut config = load_config(common, run)?;
    match command {
        Command::GenData { .. } => {
            let ds = generate(&config.data)?;
            let path = out.join("dataset.bfds");
            write_dataset(&ds, &path)?;
            run.outputs.push(path);
            println!("{} samples, {} domains", ds.len(), ds.num_domains);
        }
        Command::Split { dataset, .. } => {
            let ds = load_dataset(Some(dataset), &config, run)?;
            let plan = SplitPlan::new(&ds, config.split.test_fraction, config.split.folds, config.seed)?;
            let path = out.join("split.json");
            plan.write(&path)?;
            run.outputs.push(path);
            println!("{} test ids, {} folds", plan.test_ids.len(), plan.num_folds());
        }
        Command::PretrainGene { inputs, fold, .. } => {
            let (ds, plan) = load_inputs(inputs, &config, run)?;
            let data = FoldData::new(&ds, &plan, *fold)?;
            let model = model_config_for(&ds, &config.model, Variant::Full);
            let seed = config.seed.wrapping_add(*fold as u64);
            let pre = pretrain_gene(&data, &model, &config.train, seed)?;
            run.write(
                out.join(format!("gene_fold{fold}.bfck")),
                &Checkpoint::from_gene(&pre.params).to_bytes()?,
            )?;
            let summary = json!({ "fold": fold, "val_acc": pre.val_acc, "epochs_run": pre.epochs_run });
            run.write_json(out.join(format!("gene_metrics_fold{fold}.json")), &summary)?;
            println!("{summary}");
        }
        Command::Train {
            inputs,
            training,
            variant,
            ..
        } => {
            apply_training(&mut config, training, *variant);
            run.config = Some(config.clone());
            let (ds, plan) = load_inputs(inputs, &config, run)?;
            let folds = training.fold.map(|f| vec![f]);
            let report = run_cv(&ds, &plan, &config.model, &config.train, folds.as_deref(), training.parallel_folds)?;
            for f in &report.folds {
                run.write(
                    out.join(format!("main_fold{}.bfck", f.fold)),
                    &Checkpoint::from_main(&f.main).to_bytes()?,
                )?;
                if let Some(g) = &f.gene {
                    run.write(
                        out.join(format!("gene_fold{}.bfck", f.fold)),
                        &Checkpoint::from_gene(g).to_bytes()?,
                    )?;
                }
                run.write(
                    out.join(format!("history_fold{}.csv", f.fold)),
                    f.history.to_csv().as_bytes(),
                )?;
            }
            let summary = report.summary();
            run.write_json(out.join("metrics.json"), &summary)?;
            print!("{}", comparison_table(std::slice::from_ref(&summary), false));
            print!("{}", comparison_table(std::slice::from_ref(&summary), true));
        }
        Command::Eval {
            inputs,
            checkpoint,
            fold,
            ..
        } => {
            let (ds, plan) = load_inputs(inputs, &config, run)?;
            run.inputs.push(checkpoint.clone());
            let params = Checkpoint::read(checkpoint)?.into_main()?;
            let test = evaluate_bags(&params, &ds.select(&plan.test_ids)?, true)?;
            let val = match fold {
                Some(f) => Some(evaluate_bags(&params, &ds.select(&plan.fold_val(*f)?)?, true)?),
                None => None,
            };
            let report = json!({ "test": test, "val": val });
            run.write_json(out.join("eval_metrics.json"), &report)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Ablation { inputs, training, .. } => {
            apply_training(&mut config, training, None);
            run.config = Some(config.clone());
            let (ds, plan) = load_inputs(inputs, &config, run)?;
            let folds = training.fold.map(|f| vec![f]);
            let mut rows: Vec<CvSummary> = Vec::new();
            for v in Variant::ALL {
                let report = train_ablation(
                    v,
                    &ds,
                    &plan,
                    &config.model,
                    &config.train,
                    folds.as_deref(),
                    training.parallel_folds,
                )?;
                rows.push(report.summary());
            }
            let table = comparison_table(&rows, false);
            let test_table = comparison_table(&rows, true);
            run.write_json(out.join("ablation.json"), &rows)?;
            run.write(out.join("ablation.md"), format!("{table}\n{test_table}").as_bytes())?;
            print!("{table}\n{test_table}");
        }
        Command::Gradcheck { seeds, .. } => {
            let report = run_suite(*seeds, config.seed)?;
            info!(
                "{} cases, max relative error {:.3e}",
                report.cases.len(),
                report.max_rel_err()
            );
            if report.passed() {
                println!("PASS, max rel err < {SUITE_TOLERANCE:e}");
            } else {
                for c in report.failures() {
                    println!("FAIL {} seed {}: {:.3e} in {:?}", c.name, c.seed, c.max_rel_err, c.failing);
                }
                return Err(Error::Numeric(format!(
                    "gradient check failed: max rel err {:.3e} >= {SUITE_TOLERANCE:e}",
                    report.max_rel_err()
                )));
            }
        }
        Command::ExportEmbeddings { inputs, checkpoint, .. } => {
            let ds = load_dataset(inputs.dataset.as_deref(), &config, run)?;
            run.inputs.push(checkpoint.clone());
            let params = Checkpoint::read(checkpoint)?.into_main()?;
            let bags: Vec<_> = ds.bags.iter().collect();
            let preds = predict(&params, &bags)?;
            let rows: Vec<EmbeddingRow> = bags
                .iter()
                .zip(&preds)
                .map(|(b, p)| EmbeddingRow {
                    sample_id: b.id.clone(),
                    domain: b.domain,
                    subtype: b.subtype,
                    embedding: p.feature.values().to_vec(),
                })
                .collect();
            let points: Vec<Vec<f64>> = rows.iter().map(|r| r.embedding.clone()).collect();
            let pca = pca_2d(&points)?;
            let path = out.join("embeddings.csv");
            write_embeddings_csv(&path, &rows, Some(&pca.coords))?;
            run.outputs.push(path);
            let domains: Vec<usize> = rows.iter().map(|r| r.domain).collect();
            let probe = domain_leakage_probe(&points, &domains, ds.num_domains, config.seed)?;
            let summary = json!({
                "n_samples": rows.len(),
                "domain_probe_acc": probe,
                "explained_variance_ratio": pca.explained_variance_ratio,
            });
            run.write_json(out.join("embeddings_summary.json"), &summary)?;
            println!("{summary}");
        }
    }
    Ok(())
}
