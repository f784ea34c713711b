use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::tensor::{Generator, Scalar, Tensor};

use super::{TextError, Vocabulary, PAD, UNK};

/// Half-width of the uniform range for rows missing from the pretrained file.
pub const INIT_RANGE: f64 = 0.1;

/// Vocabulary-aligned embedding matrix `[vocab_size, dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<F: Scalar> {
    table: Tensor<F>,
    coverage: f64,
}

impl<F: Scalar> EmbeddingTable<F> {
    /// Every row drawn from uniform(-0.1, 0.1) except the zero PAD row.
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Self {
        assert!(vocab_size >= 2 && dim >= 1, "embedding table needs PAD, UNK and a positive width");
        let mut table: Tensor<F> = Generator::seeded(seed).uniform(&[vocab_size, dim], -INIT_RANGE, INIT_RANGE);
        table.data_mut()[PAD * dim..(PAD + 1) * dim].fill(F::zero());
        EmbeddingTable { table, coverage: 0.0 }
    }

    pub fn from_tensor(table: Tensor<F>) -> Result<Self, TextError> {
        if table.rank() != 2 || table.shape()[0] < 2 {
            return Err(TextError::Invalid(format!("embedding table must be [vocab>=2, dim], got {:?}", table.shape())));
        }
        if !table.all_finite() {
            return Err(TextError::Invalid("embedding table contains non-finite values".into()));
        }
        let mut table = table;
        let d = table.shape()[1];
        table.data_mut()[..d].fill(F::zero());
        Ok(EmbeddingTable { table, coverage: 0.0 })
    }

    pub fn vocab_size(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    /// Fraction of non-reserved vocabulary tokens found in the pretrained file.
    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn table(&self) -> &Tensor<F> {
        &self.table
    }

    pub fn into_tensor(self) -> Tensor<F> {
        self.table
    }

    pub fn row(&self, i: usize) -> &[F] {
        let d = self.dim();
        &self.table.data()[i * d..(i + 1) * d]
    }

    /// Writes the table in word-vector text format, one line per vocabulary
    /// entry (reserved entries included).
    pub fn write_text<W: Write>(&self, vocab: &Vocabulary, mut out: W) -> std::io::Result<()> {
        assert_eq!(vocab.len(), self.vocab_size(), "vocabulary/table size");
        writeln!(out, "{} {}", self.vocab_size(), self.dim())?;
        for (i, tok) in vocab.tokens().iter().enumerate() {
            write!(out, "{tok}")?;
            for v in self.row(i) {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Loads pretrained vectors for `vocab` from a word-vector text file.
pub fn load_embeddings<F: Scalar>(path: &Path, vocab: &Vocabulary, seed: u64) -> Result<EmbeddingTable<F>, TextError> {
    let file = File::open(path).map_err(|e| TextError::io(path, e))?;
    parse_embeddings(BufReader::new(file), vocab, seed)
}

/// Parses `count dim` followed by `word v1 .. v_dim` lines. Vocabulary rows
/// found in the file are copied; the rest keep their seeded random init.
pub fn parse_embeddings<F: Scalar, R: BufRead>(reader: R, vocab: &Vocabulary, seed: u64) -> Result<EmbeddingTable<F>, TextError> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or(TextError::Parse { line: 1, msg: "empty embedding file".into() })?;
    let header = header.map_err(|e| TextError::Parse { line: 1, msg: e.to_string() })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let parse_usize = |s: &str| s.parse::<usize>().ok().filter(|&v| v > 0);
    let (count, dim) = match fields.as_slice() {
        [c, d] => match (parse_usize(c), parse_usize(d)) {
            (Some(c), Some(d)) => (c, d),
            _ => return Err(TextError::Parse { line: 1, msg: format!("bad header {header:?}") }),
        },
        _ => return Err(TextError::Parse { line: 1, msg: format!("header must be `count dim`, got {header:?}") }),
    };

    let mut table = EmbeddingTable::<F>::random(vocab.len(), dim, seed);
    let mut found = vec![false; vocab.len()];
    let mut rows = 0usize;
    for (n, line) in lines {
        let line_no = n + 1;
        let line = line.map_err(|e| TextError::Parse { line: line_no, msg: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        rows += 1;
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("non-empty line");
        let values: Vec<&str> = parts.collect();
        if values.is_empty() {
            return Err(TextError::Parse { line: line_no, msg: format!("no vector for {word:?}") });
        }
        if values.len() != dim {
            return Err(TextError::DimensionMismatch { line: line_no, expected: dim, found: values.len() });
        }
        let idx = vocab.encode(word);
        let is_real_hit = vocab.contains(word) && !found[idx];
        let mut parsed = Vec::with_capacity(dim);
        for v in values {
            let x: f64 = v
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| TextError::Parse { line: line_no, msg: format!("non-numeric value {v:?}") })?;
            parsed.push(F::from_f64_lossy(x));
        }
        if is_real_hit {
            found[idx] = true;
            if idx != PAD {
                table.table.data_mut()[idx * dim..(idx + 1) * dim].copy_from_slice(&parsed);
            }
        }
    }
    if rows != count {
        log::warn!("embedding header declares {count} vectors but the file holds {rows}");
    }
    let regular = vocab.len() - 2;
    table.coverage = if regular == 0 {
        0.0
    } else {
        found.iter().skip(UNK + 1).filter(|&&f| f).count() as f64 / regular as f64
    };
    Ok(table)
}
