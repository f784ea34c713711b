use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{align_indices, filter_text, FilterRules, TextError, TokenSequence, Tokenizer, Vocabulary, WhitespaceTokenizer};

/// Binary sentiment label: 0 negative, 1 positive.
pub type Label = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedLine {
    pub line: usize,
    pub reason: String,
}

/// Labelled raw samples read from a `label<TAB>text` file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub samples: Vec<(Label, String)>,
    /// Lines that could not be parsed; they are skipped, not fatal.
    pub malformed: Vec<MalformedLine>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn parse_corpus(text: &str) -> Corpus {
    let mut corpus = Corpus::default();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| MalformedLine { line, reason };
        match raw.split_once('\t') {
            None => corpus.malformed.push(bad("missing tab separator".into())),
            Some((label, body)) => match label.trim() {
                "0" => corpus.samples.push((0, body.to_owned())),
                "1" => corpus.samples.push((1, body.to_owned())),
                other => corpus.malformed.push(bad(format!("label must be 0 or 1, got {other:?}"))),
            },
        }
    }
    corpus
}

pub fn read_corpus(path: &Path) -> Result<Corpus, TextError> {
    let text = fs::read_to_string(path).map_err(|e| TextError::io(path, e))?;
    Ok(parse_corpus(&text))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub label: Label,
    pub tokens: TokenSequence,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Prepared {
    pub samples: Vec<PreparedSample>,
    /// Samples with no tokens left after filtering.
    pub dropped_empty: usize,
}

impl Prepared {
    pub fn token_sequences(&self) -> impl Iterator<Item = &TokenSequence> {
        self.samples.iter().map(|s| &s.tokens)
    }
}

/// Filter followed by tokenization.
pub struct Pipeline {
    rules: FilterRules,
    tokenizer: Box<dyn Tokenizer + Send + Sync>,
}

impl Default for Pipeline {
    fn default() -> Self {
        Pipeline::new(FilterRules::default())
    }
}

impl Pipeline {
    /// Whitespace tokenization with the given filter rules.
    pub fn new(rules: FilterRules) -> Self {
        let tokenizer = Box::new(WhitespaceTokenizer::new(rules.clone()));
        Pipeline { rules, tokenizer }
    }

    pub fn with_tokenizer(rules: FilterRules, tokenizer: Box<dyn Tokenizer + Send + Sync>) -> Self {
        Pipeline { rules, tokenizer }
    }

    pub fn rules(&self) -> &FilterRules {
        &self.rules
    }

    pub fn tokens(&self, raw: &str) -> Result<TokenSequence, TextError> {
        self.tokenizer.tokenize(&filter_text(raw, &self.rules))
    }

    pub fn prepare(&self, corpus: &Corpus) -> Result<Prepared, TextError> {
        let mut out = Prepared::default();
        for (label, text) in &corpus.samples {
            let tokens = self.tokens(text)?;
            if tokens.is_empty() {
                out.dropped_empty += 1;
            } else {
                out.samples.push(PreparedSample { label: *label, tokens });
            }
        }
        if out.dropped_empty > 0 {
            log::info!("dropped {} samples that were empty after filtering", out.dropped_empty);
        }
        Ok(out)
    }
}

/// Fixed-length index rows with their labels and pre-alignment lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedBatch {
    max_len: usize,
    indices: Vec<usize>,
    pub labels: Vec<Label>,
    pub lengths: Vec<usize>,
}

impl EncodedBatch {
    pub fn new(max_len: usize, indices: Vec<usize>, labels: Vec<Label>, lengths: Vec<usize>) -> Result<Self, TextError> {
        if max_len == 0 {
            return Err(TextError::Invalid("max_len must be at least 1".into()));
        }
        if indices.len() != labels.len() * max_len || lengths.len() != labels.len() {
            return Err(TextError::Invalid(format!(
                "{} labels, {} lengths and {} indices do not form rows of {max_len}",
                labels.len(),
                lengths.len(),
                indices.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(TextError::Invalid(format!("label {l} is not binary")));
        }
        Ok(EncodedBatch { max_len, indices, labels, lengths })
    }

    pub fn encode(prepared: &Prepared, vocab: &Vocabulary, max_len: usize) -> Self {
        assert!(max_len >= 1, "max_len must be at least 1");
        let mut indices = Vec::with_capacity(prepared.samples.len() * max_len);
        let mut labels = Vec::with_capacity(prepared.samples.len());
        let mut lengths = Vec::with_capacity(prepared.samples.len());
        for s in &prepared.samples {
            indices.extend(align_indices(&vocab.encode_all(&s.tokens), max_len));
            labels.push(s.label);
            lengths.push(s.tokens.len());
        }
        EncodedBatch { max_len, indices, labels, lengths }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Row-major `[len, max_len]` index matrix.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.max_len..(i + 1) * self.max_len]
    }

    pub fn max_index(&self) -> Option<usize> {
        self.indices.iter().copied().max()
    }

    /// New batch made of the given rows, in the given order.
    pub fn gather(&self, rows: &[usize]) -> EncodedBatch {
        let mut indices = Vec::with_capacity(rows.len() * self.max_len);
        for &r in rows {
            indices.extend_from_slice(self.row(r));
        }
        EncodedBatch {
            max_len: self.max_len,
            indices,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            lengths: rows.iter().map(|&r| self.lengths[r]).collect(),
        }
    }

    /// One `label<TAB>original_length<TAB>i1 i2 ...` line per row.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            write!(out, "{}\t{}\t", self.labels[i], self.lengths[i]).expect("string write");
            for (j, idx) in self.row(i).iter().enumerate() {
                if j > 0 {
                    out.push(' ');
                }
                write!(out, "{idx}").expect("string write");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self, TextError> {
        let mut max_len = None;
        let (mut indices, mut labels, mut lengths) = (Vec::new(), Vec::new(), Vec::new());
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let err = |msg: String| TextError::Parse { line, msg };
            let fields: Vec<&str> = raw.split('\t').collect();
            let [label, len, row] = fields.as_slice() else {
                return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
            };
            let label: Label = label.parse().ok().filter(|&l| l <= 1).ok_or_else(|| err(format!("bad label {label:?}")))?;
            let len: usize = len.parse().map_err(|_| err(format!("bad length {len:?}")))?;
            let row: Vec<usize> = row
                .split(' ')
                .map(|s| s.parse().map_err(|_| err(format!("bad index {s:?}"))))
                .collect::<Result<_, _>>()?;
            match max_len {
                None => max_len = Some(row.len()),
                Some(m) if m != row.len() => return Err(err(format!("row has {} indices, expected {m}", row.len()))),
                _ => {}
            }
            indices.extend(row);
            labels.push(label);
            lengths.push(len);
        }
        let max_len = max_len.ok_or_else(|| TextError::Invalid("encoded file has no rows".into()))?;
        EncodedBatch::new(max_len, indices, labels, lengths)
    }

    pub fn read(path: &Path) -> Result<Self, TextError> {
        let text = fs::read_to_string(path).map_err(|e| TextError::io(path, e))?;
        EncodedBatch::parse_text(&text).map_err(|e| match e {
            TextError::Parse { line, msg } => TextError::Parse { line, msg: format!("{}: {msg}", path.display()) },
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), TextError> {
        fs::write(path, self.to_text()).map_err(|e| TextError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textpipe::{PAD, UNK};

    #[test]
    fn corpus_parsing_records_bad_lines() {
        let c = parse_corpus("1\t电影 很 好看\nno tab\n2\tx\n\n0\t难看 。\r\n");
        assert_eq!(c.samples, vec![(1, "电影 很 好看".to_string()), (0, "难看 。".to_string())]);
        let lines: Vec<usize> = c.malformed.iter().map(|m| m.line).collect();
        assert_eq!(lines, vec![2, 3]);
    }

    #[test]
    fn pipeline_drops_empty_samples() {
        let c = parse_corpus("1\t好看！！！~~~@@\n0\t~~~@@\n");
        let p = Pipeline::default().prepare(&c).unwrap();
        assert_eq!(p.dropped_empty, 1);
        assert_eq!(p.samples[0].tokens, vec!["好看", "！", "！", "！"]);
    }

    #[test]
    fn encode_aligns_at_front() {
        let c = parse_corpus("1\ta b c d e\n0\ta b\n");
        let p = Pipeline::default().prepare(&c).unwrap();
        let v = Vocabulary::build(p.token_sequences(), 4).unwrap();
        let e = EncodedBatch::encode(&p, &v, 3);
        let a = v.encode("a");
        let b = v.encode("b");
        assert_eq!(e.row(0), &[UNK, UNK, UNK]);
        assert_eq!(e.row(1), &[PAD, a, b]);
        assert_eq!(e.lengths, vec![5, 2]);
    }

    #[test]
    fn text_round_trip_and_gather() {
        let e = EncodedBatch::new(2, vec![0, 3, 4, 5, 0, 1], vec![1, 0, 1], vec![1, 7, 1]).unwrap();
        let back = EncodedBatch::parse_text(&e.to_text()).unwrap();
        assert_eq!(back, e);
        let g = e.gather(&[2, 0]);
        assert_eq!(g.indices(), &[0, 1, 0, 3]);
        assert_eq!(g.labels, vec![1, 1]);
        assert!(EncodedBatch::parse_text("1\t2\t1 2\n0\t1\t3\n").is_err());
        assert!(EncodedBatch::parse_text("5\t2\t1 2\n").is_err());
    }
}
