use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use tegru::model::{Checkpoint, Model};
use tegru::train::{evaluate, fit, EvalReport, FitOutcome};

use crate::config::RunConfig;
use crate::dataset::{Dataset, Split};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Directory written by `preprocess`.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML file with `[model]` and `[train]` tables.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides both the model and the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub outcome: FitOutcome,
    pub test: Option<EvalReport>,
    pub checkpoint: PathBuf,
    pub parameters: usize,
}

/// Builds the configured model for `data` and fits it.
pub fn train_model(data: &Dataset, cfg: &RunConfig) -> Result<(Model<f32>, FitOutcome)> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    if !data.has(Split::Valid) {
        bail!("{} has no validation split; rerun preprocess with --valid", data.dir.display());
    }
    let train = data.split(Split::Train)?;
    let valid = data.split(Split::Valid)?;
    if train.max_len() != cfg.model.max_len {
        bail!("dataset rows hold {} tokens but model.max_len is {}", train.max_len(), cfg.model.max_len);
    }
    let mut model = match data.embeddings()? {
        Some(table) => Model::build(cfg.model.clone(), table)?,
        None => Model::with_random_embeddings(cfg.model.clone(), data.vocab.len())?,
    };
    log::info!("{}: {} parameters", cfg.model.kind, model.parameter_count());
    let outcome = fit(&mut model, &train, &valid, &cfg.train)?;
    Ok((model, outcome))
}

pub fn run(args: &TrainArgs) -> Result<TrainSummary> {
    let cfg = RunConfig::load(&args.config)?.with_seed(args.seed);
    let data = Dataset::open(&args.data)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    fs::write(args.out.join(RESOLVED_CONFIG_FILE), cfg.resolved_toml())?;
    let (model, outcome) = train_model(&data, &cfg)?;
    fs::write(args.out.join(HISTORY_FILE), outcome.history_jsonl())?;
    let test = if data.has(Split::Test) { Some(evaluate(&model, &data.split(Split::Test)?)?) } else { None };
    let parameters = model.parameter_count();
    let checkpoint = args.out.join(CHECKPOINT_FILE);
    Checkpoint::new(model, data.vocab.fingerprint()).save(&checkpoint)?;
    Ok(TrainSummary { outcome, test, checkpoint, parameters })
}
