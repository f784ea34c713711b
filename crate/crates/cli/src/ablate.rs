use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use tegru::model::ModelKind;
use tegru::train::evaluate;

use crate::config::RunConfig;
use crate::dataset::{Dataset, Split};
use crate::train_cmd::train_model;

pub const ROWS_FILE: &str = "ablation.jsonl";
pub const TABLE_FILE: &str = "ablation.txt";

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Base run config; each cell overrides the swept fields.
    #[arg(long)]
    pub config: PathBuf,
    /// TOML grid with optional `kinds`, `d_ff`, `n_heads` and `dropout` lists.
    #[arg(long)]
    pub sweep: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Grid of overrides; an absent list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub kinds: Option<Vec<ModelKind>>,
    pub d_ff: Option<Vec<usize>>,
    pub n_heads: Option<Vec<usize>>,
    pub dropout: Option<Vec<f64>>,
}

impl Sweep {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading sweep {}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}", e.message().trim())).with_context(|| format!("invalid sweep {}", path.display()))
    }

    /// Cell configs in grid order: kinds, then d_ff, heads and dropout.
    pub fn cells(&self, base: &RunConfig) -> Vec<RunConfig> {
        let kinds = self.kinds.clone().unwrap_or_else(|| vec![base.model.kind]);
        let d_ff = self.d_ff.clone().unwrap_or_else(|| vec![base.model.d_ff]);
        let heads = self.n_heads.clone().unwrap_or_else(|| vec![base.model.n_heads]);
        let dropout = self.dropout.clone().unwrap_or_else(|| vec![base.model.dropout]);
        let mut out = Vec::new();
        for &kind in &kinds {
            for &f in &d_ff {
                for &h in &heads {
                    for &p in &dropout {
                        let mut c = base.clone();
                        c.model.kind = kind;
                        c.model.d_ff = f;
                        c.model.n_heads = h;
                        c.model.dropout = p;
                        out.push(c);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub d_ff: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub status: String,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub latency_ms: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

impl AblationRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

pub fn render_table(rows: &[AblationRow]) -> String {
    let mut s = String::new();
    writeln!(s, "{:<18} {:>6} {:>5} {:>7}  {:>9} {:>9} {:>14}", "Method", "d_ff", "heads", "dropout", "Accuracy", "F1", "Test Time(ms)").unwrap();
    for r in rows {
        match (r.accuracy, r.f1, r.latency_ms) {
            (Some(a), Some(f), Some(t)) => writeln!(
                s,
                "{:<18} {:>6} {:>5} {:>7.2}  {:>8.2}% {:>8.2}% {:>14.4}",
                r.method,
                r.d_ff,
                r.n_heads,
                r.dropout,
                a * 100.0,
                f * 100.0,
                t
            ),
            _ => writeln!(
                s,
                "{:<18} {:>6} {:>5} {:>7.2}  failed: {}",
                r.method,
                r.d_ff,
                r.n_heads,
                r.dropout,
                r.error.as_deref().unwrap_or("unknown error")
            ),
        }
        .unwrap();
    }
    s
}

fn run_cell(data: &Dataset, cfg: &RunConfig, eval_split: Split) -> Result<(f64, f64, f64, usize)> {
    let (model, outcome) = train_model(data, cfg)?;
    let report = evaluate(&model, &data.split(eval_split)?)?;
    Ok((report.accuracy, report.f1, report.latency_ms, outcome.best_epoch))
}

/// Trains every grid cell from scratch. A failing cell is recorded and the
/// sweep moves on.
pub fn run(args: &AblateArgs) -> Result<Vec<AblationRow>> {
    let base = RunConfig::load(&args.config)?.with_seed(args.seed);
    let sweep = Sweep::load(&args.sweep)?;
    let data = Dataset::open(&args.data)?;
    let eval_split = if data.has(Split::Test) { Split::Test } else { Split::Valid };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut rows = Vec::new();
    for cfg in sweep.cells(&base) {
        let m = &cfg.model;
        log::info!("cell {} d_ff={} heads={} dropout={}", m.kind, m.d_ff, m.n_heads, m.dropout);
        let mut row = AblationRow {
            method: m.kind.name().into(),
            d_ff: m.d_ff,
            n_heads: m.n_heads,
            dropout: m.dropout,
            status: "ok".into(),
            accuracy: None,
            f1: None,
            latency_ms: None,
            best_epoch: None,
            error: None,
        };
        match run_cell(&data, &cfg, eval_split) {
            Ok((a, f, t, e)) => {
                row.accuracy = Some(a);
                row.f1 = Some(f);
                row.latency_ms = Some(t);
                row.best_epoch = Some(e);
            }
            Err(e) => {
                log::warn!("cell {} failed: {e:#}", m.kind);
                row.status = "failed".into();
                row.error = Some(format!("{e:#}"));
            }
        }
        rows.push(row);
    }
    let jsonl: String = rows.iter().map(|r| serde_json::to_string(r).expect("row serializes") + "\n").collect();
    fs::write(args.out.join(ROWS_FILE), jsonl)?;
    fs::write(args.out.join(TABLE_FILE), render_table(&rows))?;
    Ok(rows)
}
