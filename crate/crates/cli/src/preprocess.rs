use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use tegru::textpipe::{
    load_embeddings, read_corpus, EmbeddingTable, EncodedBatch, ExternalSegmenter, FilterRules, Pipeline, Prepared, Vocabulary,
};

use crate::dataset::{Split, EMBEDDINGS_FILE, STATS_FILE, VOCAB_FILE};

#[derive(Debug, Clone, Args)]
pub struct PreprocessArgs {
    /// Training corpus (`label<TAB>text` per line); the vocabulary is built from it.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Vocabulary size including PAD and UNK.
    #[arg(long, default_value_t = 200_000)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 100)]
    pub max_len: usize,
    /// Pretrained vectors in word-vector text format.
    #[arg(long)]
    pub emb: Option<PathBuf>,
    /// Seed for rows missing from the pretrained file.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Punctuation marks kept by the filter (default: full-width and ASCII clause marks).
    #[arg(long)]
    pub retain: Option<String>,
    /// External segmenter command; receives text on stdin, prints one token per line.
    #[arg(long)]
    pub segmenter: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub p50: usize,
    pub p90: usize,
    pub p95: usize,
    pub p99: usize,
    pub max: usize,
    /// Fraction of samples no longer than `max_len`.
    pub within_max_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: String,
    pub samples: usize,
    pub positive: usize,
    pub malformed_lines: Vec<usize>,
    pub dropped_empty: usize,
    pub lengths: Option<LengthStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub max_len: usize,
    /// Share of training-token occurrences covered by the vocabulary.
    pub token_coverage: f64,
    /// Share of vocabulary tokens found in the pretrained file.
    pub embedding_coverage: Option<f64>,
    pub embedding_dim: Option<usize>,
    pub splits: Vec<SplitStats>,
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[usize], q: f64) -> usize {
    assert!(!sorted.is_empty());
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn length_stats(prepared: &Prepared, max_len: usize) -> Option<LengthStats> {
    let mut lens: Vec<usize> = prepared.samples.iter().map(|s| s.tokens.len()).collect();
    if lens.is_empty() {
        return None;
    }
    lens.sort_unstable();
    let within = lens.iter().filter(|&&l| l <= max_len).count() as f64 / lens.len() as f64;
    Some(LengthStats {
        p50: percentile(&lens, 50.0),
        p90: percentile(&lens, 90.0),
        p95: percentile(&lens, 95.0),
        p99: percentile(&lens, 99.0),
        max: *lens.last().expect("non-empty"),
        within_max_len: within,
    })
}

pub fn run(args: &PreprocessArgs) -> Result<PreprocessStats> {
    if args.max_len == 0 {
        bail!("--max-len must be at least 1");
    }
    let rules = args.retain.as_deref().map(FilterRules::from_marks).unwrap_or_default();
    let pipeline = match &args.segmenter {
        Some(cmd) => {
            let mut parts = cmd.split_whitespace();
            let program = parts.next().context("--segmenter is empty")?;
            Pipeline::with_tokenizer(rules, Box::new(ExternalSegmenter::new(program, parts)))
        }
        None => Pipeline::new(rules),
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut inputs = vec![(Split::Train, &args.train)];
    inputs.extend(args.valid.as_ref().map(|p| (Split::Valid, p)));
    inputs.extend(args.test.as_ref().map(|p| (Split::Test, p)));

    let mut prepared = Vec::new();
    for (split, path) in inputs {
        let corpus = read_corpus(path).with_context(|| format!("reading {} corpus", split.name()))?;
        for m in &corpus.malformed {
            log::warn!("{}:{}: skipped malformed line: {}", path.display(), m.line, m.reason);
        }
        if !corpus.malformed.is_empty() {
            log::warn!("{}: skipped {} malformed lines", path.display(), corpus.malformed.len());
        }
        let p = pipeline.prepare(&corpus)?;
        prepared.push((split, corpus.malformed.iter().map(|m| m.line).collect::<Vec<_>>(), p));
    }

    let vocab = Vocabulary::build(prepared[0].2.token_sequences(), args.vocab_size)?;
    fs::write(args.out.join(VOCAB_FILE), vocab.export())?;
    let token_coverage = vocab.occurrence_coverage(prepared[0].2.token_sequences());

    let mut splits = Vec::new();
    for (split, malformed, p) in &prepared {
        EncodedBatch::encode(p, &vocab, args.max_len).write(&args.out.join(split.file()))?;
        splits.push(SplitStats {
            split: split.name().into(),
            samples: p.samples.len(),
            positive: p.samples.iter().filter(|s| s.label == 1).count(),
            malformed_lines: malformed.clone(),
            dropped_empty: p.dropped_empty,
            lengths: length_stats(p, args.max_len),
        });
    }

    let (mut embedding_coverage, mut embedding_dim) = (None, None);
    if let Some(path) = &args.emb {
        let table: EmbeddingTable<f32> = load_embeddings(path, &vocab, args.seed)?;
        let mut buf = Vec::new();
        table.write_text(&vocab, &mut buf)?;
        fs::write(args.out.join(EMBEDDINGS_FILE), buf)?;
        embedding_coverage = Some(table.coverage());
        embedding_dim = Some(table.dim());
    }

    let stats = PreprocessStats {
        vocab_size: vocab.len(),
        vocab_hash: vocab.fingerprint(),
        max_len: args.max_len,
        token_coverage,
        embedding_coverage,
        embedding_dim,
        splits,
    };
    fs::write(args.out.join(STATS_FILE), serde_json::to_string_pretty(&stats)? + "\n")?;
    Ok(stats)
}
