use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tegru::model::ModelConfig;
use tegru::train::TrainConfig;

/// Contents of a run config file: `[model]` and `[train]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("{}", e.message().trim()).context(describe(&e)))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        RunConfig::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Applies a seed override to both the model and the training loop.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.model.seed = s;
            self.train.seed = s;
        }
        self
    }

    /// Every field spelled out, defaults included.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn describe(e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => format!("config error at bytes {}..{}", span.start, span.end),
        None => "config error".into(),
    }
}
