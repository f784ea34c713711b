//! Raw comment text to fixed-length index rows.
//!
//! The stages run in order: [`filter_text`] drops punctuation that cannot
//! delimit clauses, a [`Tokenizer`] splits the text, a [`Vocabulary`] maps
//! tokens to indices and [`align`] pads or truncates at the front so the end
//! of every comment survives.

mod align;
mod corpus;
mod embedding;
mod filter;
mod tokenize;
mod vocab;

use std::path::PathBuf;

use thiserror::Error;

pub use align::{align, align_indices};
pub use corpus::{parse_corpus, read_corpus, Corpus, EncodedBatch, Label, MalformedLine, Pipeline, PreparedSample, Prepared};
pub use embedding::{load_embeddings, parse_embeddings, EmbeddingTable};
pub use filter::{filter_text, is_punctuation, FilterRules};
pub use tokenize::{parse_segmenter_output, ExternalSegmenter, TokenSequence, Tokenizer, WhitespaceTokenizer};
pub use vocab::{Vocabulary, PAD, PAD_TOKEN, UNK, UNK_TOKEN};

#[derive(Debug, Error)]
pub enum TextError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("embedding dimension mismatch on line {line}: header says {expected}, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("segmenter failed: {0}")]
    Segmenter(String),
    #[error("{0}")]
    Invalid(String),
}

impl TextError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TextError::Io { path: path.into(), source }
    }
}
