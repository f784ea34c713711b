//! Complete classifiers assembled from [`crate::nn`] blocks.
//!
//! Every [`ModelKind`] shares the same outline: embedding lookup, an
//! optional encoder stack, an optional attention pool, one recurrent layer
//! and the log-softmax head.

mod checkpoint;
mod config;
mod kind;

use std::path::PathBuf;

use thiserror::Error;

use crate::nn::{AttentionPool, ClassifyHead, EncoderBlock, ParamId, ParamStore, Recurrent, Session};
use crate::tensor::{lit, Scalar, Tensor, TensorError, Var};
use crate::textpipe::{EmbeddingTable, EncodedBatch, PAD};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{HeadInput, ModelConfig};
pub use kind::{AttentionPlacement, ModelKind};

/// Offset mixed into the config seed for randomly initialized embeddings.
const EMBEDDING_SEED_OFFSET: u64 = 0x5eed_e4b3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("embedding width {found} does not match d_model {expected}")]
    EmbeddingWidth { expected: usize, found: usize },
    #[error("checkpoint {what} mismatch: expected {expected}, found {found}")]
    Mismatch { what: &'static str, expected: String, found: String },
    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// A classifier and its parameters.
#[derive(Debug, Clone)]
pub struct Model<F: Scalar> {
    config: ModelConfig,
    store: ParamStore<F>,
    embedding: ParamId,
    encoders: Vec<EncoderBlock>,
    pool: Option<AttentionPool>,
    recurrent: Recurrent,
    head: ClassifyHead,
}

impl<F: Scalar> Model<F> {
    /// Initializes every parameter from `config.seed` around the given
    /// embedding table.
    pub fn build(config: ModelConfig, embeddings: EmbeddingTable<F>) -> Result<Self, ModelError> {
        config.validate()?;
        if embeddings.dim() != config.d_model {
            return Err(ModelError::EmbeddingWidth { expected: config.d_model, found: embeddings.dim() });
        }
        let kind = config.kind;
        let d = config.d_model;
        let mut rng = crate::tensor::Generator::seeded(config.seed);
        let mut store = ParamStore::new();
        let embedding = store.add("embedding", embeddings.into_tensor());
        store.set_trainable(embedding, config.trainable_embeddings);
        store.freeze_row(embedding, PAD);
        let mut encoders = Vec::new();
        if kind.has_encoder() {
            for i in 0..config.encoder_layers {
                encoders.push(EncoderBlock::new(
                    &mut store,
                    &format!("encoder{i}"),
                    d,
                    config.n_heads,
                    config.d_ff,
                    config.dropout,
                    config.strict_attention,
                    &mut rng,
                )?);
            }
        }
        let mut pool = None;
        if kind.attention() == Some(AttentionPlacement::Before) {
            pool = Some(AttentionPool::new(&mut store, "pool", d, &mut rng));
        }
        let recurrent = Recurrent::new(
            &mut store,
            "recurrent",
            kind.cell(),
            d,
            config.recurrent_hidden,
            kind.bidirectional(),
            !config.gru_without_bias,
            &mut rng,
        )?;
        if kind.attention() == Some(AttentionPlacement::After) {
            pool = Some(AttentionPool::new(&mut store, "pool", config.recurrent_hidden, &mut rng));
        }
        let head = ClassifyHead::new(&mut store, "head", config.recurrent_hidden, &mut rng);
        Ok(Model { config, store, embedding, encoders, pool, recurrent, head })
    }

    /// Builds with a seeded uniform(-0.1, 0.1) embedding table.
    pub fn with_random_embeddings(config: ModelConfig, vocab_size: usize) -> Result<Self, ModelError> {
        if vocab_size < 2 {
            return Err(ModelError::Config(format!("vocabulary of {vocab_size} leaves no room for PAD and UNK")));
        }
        let emb = EmbeddingTable::random(vocab_size, config.d_model, config.seed.wrapping_add(EMBEDDING_SEED_OFFSET));
        Model::build(config, emb)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    pub fn vocab_size(&self) -> usize {
        self.store.get(self.embedding).shape()[0]
    }

    pub fn embedding_id(&self) -> ParamId {
        self.embedding
    }

    pub fn encoders(&self) -> &[EncoderBlock] {
        &self.encoders
    }

    pub fn recurrent(&self) -> &Recurrent {
        &self.recurrent
    }

    pub fn parameter_count(&self) -> usize {
        self.store.count()
    }

    /// Scalars belonging to the encoder stack.
    pub fn encoder_parameter_count(&self) -> usize {
        self.store.count_prefix("encoder")
    }

    /// Log-probabilities `[batch, 2]` for `batch` rows of `indices`.
    pub fn forward(&self, s: &mut Session<'_, F>, indices: &[usize], batch: usize) -> Result<Var, TensorError> {
        if batch == 0 || !indices.len().is_multiple_of(batch) {
            return Err(TensorError::Invalid { op: "model", msg: format!("{} indices do not split into {batch} rows", indices.len()) });
        }
        let n = indices.len() / batch;
        let d = self.config.d_model;
        let mut x = s.lookup(self.embedding, indices, &[batch, n])?;
        if !self.encoders.is_empty() {
            let mask: Option<Vec<bool>> = self.config.attention_mask.then(|| indices.iter().map(|&i| i == PAD).collect());
            for enc in &self.encoders {
                x = enc.forward(s, x, mask.as_deref())?;
            }
            x = s.dropout(x, self.config.dropout)?;
        }
        if let (Some(pool), Some(AttentionPlacement::Before)) = (&self.pool, self.config.kind.attention()) {
            let (pooled, _) = pool.forward(s, x)?;
            x = s.tape.reshape(pooled, &[batch, 1, d])?;
        }
        let out = self.recurrent.forward(s, x)?;
        let h = match (&self.pool, self.config.kind.attention()) {
            (Some(pool), Some(AttentionPlacement::After)) => pool.forward(s, out.states)?.0,
            _ => match self.config.head_input {
                HeadInput::Final => out.last,
                HeadInput::Mean => {
                    let steps = s.tape.shape(out.states)[1];
                    let w = s.tape.constant(Tensor::full(&[1, steps], lit(1.0 / steps as f64)));
                    let m = s.tape.matmul(w, out.states)?;
                    s.tape.reshape(m, &[batch, self.config.recurrent_hidden])?
                }
            },
        };
        self.head.forward(s, h)
    }

    /// Inference-mode log-probabilities for a whole batch.
    pub fn log_probs(&self, batch: &EncodedBatch) -> Result<Tensor<F>, TensorError> {
        self.check_batch(batch)?;
        let mut s = Session::eval(&self.store);
        let out = self.forward(&mut s, batch.indices(), batch.len())?;
        Ok(s.tape.value(out).clone())
    }

    /// Predicted class per row; ties go to class 0.
    pub fn predict(&self, batch: &EncodedBatch) -> Result<Vec<usize>, TensorError> {
        Ok(crate::nn::predict(&self.log_probs(batch)?))
    }

    pub fn check_batch(&self, batch: &EncodedBatch) -> Result<(), TensorError> {
        match batch.max_index() {
            Some(m) if m >= self.vocab_size() => {
                Err(TensorError::Invalid { op: "model", msg: format!("index {m} outside vocabulary of {}", self.vocab_size()) })
            }
            _ => Ok(()),
        }
    }
}
