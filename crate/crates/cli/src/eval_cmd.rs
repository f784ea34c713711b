use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use tegru::model::Checkpoint;
use tegru::train::{evaluate, EvalReport};

use crate::dataset::{Dataset, Split};

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory written by `preprocess`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
}

pub fn run(args: &EvalArgs) -> Result<EvalReport> {
    if !args.checkpoint.exists() {
        bail!("checkpoint not found: {}", args.checkpoint.display());
    }
    let ck = Checkpoint::<f32>::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let data = Dataset::open(&args.data)?;
    ck.expect_vocab(data.vocab.len(), Some(&data.vocab.fingerprint()))
        .context("checkpoint was trained on a different vocabulary")?;
    let batch = data.split(args.split)?;
    if batch.max_len() != ck.model.config().max_len {
        bail!("{} rows hold {} tokens but the checkpoint expects {}", args.split.name(), batch.max_len(), ck.model.config().max_len);
    }
    Ok(evaluate(&ck.model, &batch)?)
}
