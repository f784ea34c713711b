use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::TextError;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Frequency-ranked token index. Index 0 is PAD and index 1 is UNK; every
/// other index belongs to exactly one token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the `max_size - 2` most frequent tokens. Ties go to the token
    /// seen first.
    pub fn build<'a, I, S>(sequences: I, max_size: usize) -> Result<Self, TextError>
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        if max_size < 2 {
            return Err(TextError::Invalid(format!("vocabulary size {max_size} leaves no room for PAD and UNK")));
        }
        // token -> (count, first position)
        let mut counts: HashMap<&'a str, (usize, usize)> = HashMap::new();
        let mut seen = 0usize;
        for seq in sequences {
            for tok in seq.as_ref() {
                if tok == PAD_TOKEN || tok == UNK_TOKEN {
                    continue;
                }
                let e = counts.entry(tok.as_str()).or_insert((0, seen));
                e.0 += 1;
                seen += 1;
            }
        }
        let mut ranked: Vec<(&str, usize, usize)> = counts.into_iter().map(|(t, (c, f))| (t, c, f)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        ranked.truncate(max_size - 2);
        Ok(Vocabulary::from_ranked(ranked.into_iter().map(|(t, _, _)| t.to_owned())))
    }

    fn from_ranked(rest: impl Iterator<Item = String>) -> Self {
        let mut tokens = vec![PAD_TOKEN.to_owned(), UNK_TOKEN.to_owned()];
        tokens.extend(rest);
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn encode(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn encode_all(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.encode(t)).collect()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn decode(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    /// Tokens in index order, starting with the reserved entries.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `token<TAB>index` lines in rank order.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            out.push_str(t);
            out.push('\t');
            out.push_str(&i.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_export(text: &str) -> Result<Self, TextError> {
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let (tok, idx) = line
                .rsplit_once('\t')
                .ok_or_else(|| TextError::Parse { line: line_no, msg: "expected token<TAB>index".into() })?;
            let idx: usize = idx
                .parse()
                .map_err(|_| TextError::Parse { line: line_no, msg: format!("bad index {idx:?}") })?;
            if idx != n {
                return Err(TextError::Parse { line: line_no, msg: format!("index {idx} out of order") });
            }
            tokens.push(tok.to_owned());
        }
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(TextError::Invalid("vocabulary must start with the PAD and UNK entries".into()));
        }
        let v = Vocabulary::from_ranked(tokens.into_iter().skip(2));
        if v.index.len() != v.tokens.len() {
            return Err(TextError::Invalid("duplicate token in vocabulary".into()));
        }
        Ok(v)
    }

    /// Hex SHA-256 of the export text; identifies the index mapping.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.export().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Fraction of token occurrences that map to an in-vocabulary index.
    pub fn occurrence_coverage<'a, I, S>(&self, sequences: I) -> f64
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        let (mut hit, mut total) = (0usize, 0usize);
        for seq in sequences {
            for t in seq.as_ref() {
                total += 1;
                hit += usize::from(self.encode(t) != UNK);
            }
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}
