use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tegru::textpipe::{parse_embeddings, EmbeddingTable, EncodedBatch, Vocabulary};

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.vec";
pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn file(self) -> String {
        format!("{}.enc", self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Split::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| format!("unknown split {s:?}; use train, valid or test"))
    }
}

/// A preprocessed dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub vocab: Vocabulary,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(VOCAB_FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("reading vocabulary {}", path.display()))?;
        let vocab = Vocabulary::from_export(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(Dataset { dir: dir.to_path_buf(), vocab })
    }

    pub fn has(&self, split: Split) -> bool {
        self.dir.join(split.file()).exists()
    }

    pub fn split(&self, split: Split) -> Result<EncodedBatch> {
        let path = self.dir.join(split.file());
        let batch = EncodedBatch::read(&path).with_context(|| format!("reading {} split", split.name()))?;
        if let Some(m) = batch.max_index() {
            if m >= self.vocab.len() {
                bail!("{} holds index {m} but the vocabulary has {} entries", path.display(), self.vocab.len());
            }
        }
        Ok(batch)
    }

    /// Pretrained rows aligned to the vocabulary, if preprocessing wrote them.
    pub fn embeddings(&self) -> Result<Option<EmbeddingTable<f32>>> {
        let path = self.dir.join(EMBEDDINGS_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let table = parse_embeddings(text.as_bytes(), &self.vocab, 0).with_context(|| format!("parsing {}", path.display()))?;
        Ok(Some(table))
    }
}
