use std::io::Write;
use std::process::{Command, Stdio};

use super::{FilterRules, TextError};

pub type TokenSequence = Vec<String>;

/// Splits filtered text into tokens.
pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> Result<TokenSequence, TextError>;
}

/// Default tokenizer for corpora segmented offline: tokens are separated by
/// whitespace, and each retained punctuation mark becomes its own token even
/// when glued to a word.
#[derive(Debug, Clone, Default)]
pub struct WhitespaceTokenizer {
    rules: FilterRules,
}

impl WhitespaceTokenizer {
    pub fn new(rules: FilterRules) -> Self {
        WhitespaceTokenizer { rules }
    }

    pub fn split(&self, text: &str) -> TokenSequence {
        let mut out = Vec::new();
        for chunk in text.split_whitespace() {
            let mut word = String::new();
            for c in chunk.chars() {
                if self.rules.retains(c) {
                    if !word.is_empty() {
                        out.push(std::mem::take(&mut word));
                    }
                    out.push(c.to_string());
                } else {
                    word.push(c);
                }
            }
            if !word.is_empty() {
                out.push(word);
            }
        }
        out
    }
}

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Result<TokenSequence, TextError> {
        Ok(self.split(text))
    }
}

/// Reads a segmenter's one-token-per-line output. Blank lines are skipped.
pub fn parse_segmenter_output(output: &str) -> TokenSequence {
    output.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned).collect()
}

/// Hook for an external word segmenter. The program receives the text on
/// stdin and must print one token per line on stdout.
#[derive(Debug, Clone)]
pub struct ExternalSegmenter {
    program: String,
    args: Vec<String>,
}

impl ExternalSegmenter {
    pub fn new(program: impl Into<String>, args: impl IntoIterator<Item = impl Into<String>>) -> Self {
        ExternalSegmenter { program: program.into(), args: args.into_iter().map(Into::into).collect() }
    }
}

impl Tokenizer for ExternalSegmenter {
    fn tokenize(&self, text: &str) -> Result<TokenSequence, TextError> {
        if text.trim().is_empty() {
            return Ok(Vec::new());
        }
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| TextError::Segmenter(format!("{}: {e}", self.program)))?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(text.as_bytes())
            .map_err(|e| TextError::Segmenter(e.to_string()))?;
        let out = child.wait_with_output().map_err(|e| TextError::Segmenter(e.to_string()))?;
        if !out.status.success() {
            return Err(TextError::Segmenter(format!(
                "{} exited with {}: {}",
                self.program,
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let stdout = String::from_utf8(out.stdout).map_err(|e| TextError::Segmenter(e.to_string()))?;
        Ok(parse_segmenter_output(&stdout))
    }
}
