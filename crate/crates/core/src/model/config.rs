use serde::{Deserialize, Serialize};

use super::{ModelError, ModelKind};

/// What feeds the classification head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeadInput {
    /// The recurrent layer's final state.
    #[default]
    Final,
    /// Mean of the recurrent states over all positions.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Embedding and encoder width.
    pub d_model: usize,
    pub max_len: usize,
    pub n_heads: usize,
    /// Inner width of the encoder feed-forward sublayer.
    pub d_ff: usize,
    pub encoder_layers: usize,
    /// Total recurrent width; bidirectional kinds split it across directions.
    pub recurrent_hidden: usize,
    pub dropout: f64,
    pub trainable_embeddings: bool,
    /// Drops the GRU bias terms.
    pub gru_without_bias: bool,
    /// Masks PAD keys inside self-attention.
    pub attention_mask: bool,
    /// Attention heads read the raw input instead of learned projections.
    pub strict_attention: bool,
    pub head_input: HeadInput,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::TEGRU,
            d_model: 300,
            max_len: 100,
            n_heads: 2,
            d_ff: 2048,
            encoder_layers: 1,
            recurrent_hidden: 256,
            dropout: 0.3,
            trainable_embeddings: true,
            gru_without_bias: false,
            attention_mask: false,
            strict_attention: false,
            head_input: HeadInput::Final,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        ModelConfig { kind, ..ModelConfig::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        for (name, v) in [("d_model", self.d_model), ("max_len", self.max_len), ("recurrent_hidden", self.recurrent_hidden)] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.kind.bidirectional() && !self.recurrent_hidden.is_multiple_of(2) {
            return bad(format!("{} needs an even recurrent_hidden, got {}", self.kind, self.recurrent_hidden));
        }
        if self.kind.has_encoder() {
            if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
                return bad(format!("n_heads {} does not divide d_model {}", self.n_heads, self.d_model));
            }
            if self.d_ff == 0 || self.encoder_layers == 0 {
                return bad("d_ff and encoder_layers must be positive".into());
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}
