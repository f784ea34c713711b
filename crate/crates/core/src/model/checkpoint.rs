use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::tensor::{Scalar, Tensor};
use crate::textpipe::EmbeddingTable;

use super::{Model, ModelConfig, ModelError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TEGRUCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const PREFIX_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: String,
    config: ModelConfig,
    vocab_size: usize,
    vocab_hash: String,
    tensors: Vec<TensorMeta>,
}

/// A model together with the fingerprint of the vocabulary it was trained on.
///
/// File layout: magic, `u32` version, `u64` header length, JSON header
/// (dtype, config, vocabulary size and hash, tensor names and shapes), raw
/// little-endian tensor data in header order, then the SHA-256 of everything
/// before it.
#[derive(Debug, Clone)]
pub struct Checkpoint<F: Scalar> {
    pub model: Model<F>,
    pub vocab_hash: String,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn new(model: Model<F>, vocab_hash: impl Into<String>) -> Self {
        Checkpoint { model, vocab_hash: vocab_hash.into() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let store = self.model.params();
        let header = Header {
            dtype: F::DTYPE.to_string(),
            config: self.model.config().clone(),
            vocab_size: self.model.vocab_size(),
            vocab_hash: self.vocab_hash.clone(),
            tensors: store
                .entries()
                .iter()
                .map(|e| TensorMeta { name: e.name.clone(), shape: e.value.shape().to_vec(), trainable: e.trainable })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + store.count() * F::BYTES + DIGEST_LEN);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&store.to_bytes());
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Parses a checkpoint; nothing is built unless the checksum verifies.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let integrity = |m: &str| ModelError::Integrity(m.to_string());
        if bytes.len() < PREFIX_LEN + DIGEST_LEN {
            return Err(integrity("file is truncated"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(integrity("checksum does not match contents"));
        }
        if &body[..8] != CHECKPOINT_MAGIC {
            return Err(integrity("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Mismatch { what: "format version", expected: CHECKPOINT_VERSION.to_string(), found: version.to_string() });
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let data = body.get(PREFIX_LEN..).ok_or_else(|| integrity("missing header"))?;
        if header_len > data.len() {
            return Err(integrity("header length exceeds file size"));
        }
        let (json, mut raw) = data.split_at(header_len);
        let header: Header = serde_json::from_slice(json).map_err(|e| integrity(&format!("bad header: {e}")))?;
        if header.dtype != F::DTYPE {
            return Err(ModelError::Mismatch { what: "dtype", expected: F::DTYPE.into(), found: header.dtype });
        }
        let d = header.config.d_model;
        if header.vocab_size < 2 || d == 0 {
            return Err(integrity("header declares an empty embedding table"));
        }
        let table = EmbeddingTable::from_tensor(Tensor::zeros(&[header.vocab_size, d])).map_err(|e| integrity(&e.to_string()))?;
        let mut model = Model::build(header.config, table)?;
        let ids: Vec<_> = model.params().ids().collect();
        if ids.len() != header.tensors.len() {
            return Err(integrity("tensor list does not match the configured model"));
        }
        for (id, meta) in ids.into_iter().zip(&header.tensors) {
            let entry = model.params().entry(id);
            if entry.name != meta.name || entry.value.shape() != meta.shape.as_slice() {
                return Err(integrity(&format!("unexpected tensor {} {:?}", meta.name, meta.shape)));
            }
            let n = entry.value.len() * F::BYTES;
            if raw.len() < n {
                return Err(integrity("tensor data is truncated"));
            }
            let (chunk, rest) = raw.split_at(n);
            raw = rest;
            let values: Vec<F> = chunk.chunks_exact(F::BYTES).map(F::read_le).collect();
            let store = model.params_mut();
            store.get_mut(id).data_mut().copy_from_slice(&values);
            store.set_trainable(id, meta.trainable);
        }
        if !raw.is_empty() {
            return Err(integrity("trailing bytes after tensor data"));
        }
        if !model.params().all_finite() {
            return Err(integrity("non-finite parameter values"));
        }
        Ok(Checkpoint { model, vocab_hash: header.vocab_hash })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_bytes()).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = fs::read(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Fails unless the checkpoint was trained on a vocabulary of this size
    /// (and, when given, this fingerprint).
    pub fn expect_vocab(&self, vocab_size: usize, vocab_hash: Option<&str>) -> Result<(), ModelError> {
        if self.model.vocab_size() != vocab_size {
            return Err(ModelError::Mismatch {
                what: "vocabulary size",
                expected: vocab_size.to_string(),
                found: self.model.vocab_size().to_string(),
            });
        }
        if let Some(h) = vocab_hash {
            if h != self.vocab_hash {
                return Err(ModelError::Mismatch { what: "vocabulary hash", expected: h.into(), found: self.vocab_hash.clone() });
            }
        }
        Ok(())
    }
}
