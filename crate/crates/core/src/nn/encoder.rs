use crate::tensor::{Generator, Scalar, TensorError, Var};

use super::{LayerNorm, Linear, MultiHeadAttention, ParamStore, Session};

/// Position-wise `Linear(relu(Linear(x)))`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, d_model: usize, d_ff: usize, rng: &mut Generator) -> Self {
        FeedForward {
            inner: Linear::new(store, &format!("{name}.inner"), d_model, d_ff, true, rng),
            outer: Linear::new(store, &format!("{name}.outer"), d_ff, d_model, true, rng),
        }
    }

    pub fn forward<F: Scalar>(&self, s: &mut Session<'_, F>, x: Var) -> Result<Var, TensorError> {
        let h = self.inner.forward(s, x)?;
        let h = s.tape.relu(h)?;
        self.outer.forward(s, h)
    }
}

/// Self-attention and feed-forward sublayers, each followed by a residual
/// add and layer normalization. Dropout hits each sublayer output before
/// its residual add.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
    pub dropout: f64,
}

impl EncoderBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        n_heads: usize,
        d_ff: usize,
        dropout: f64,
        strict: bool,
        rng: &mut Generator,
    ) -> Result<Self, TensorError> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(TensorError::Invalid { op: "encoder", msg: format!("dropout {dropout} outside [0, 1)") });
        }
        let attention = MultiHeadAttention::new(store, &format!("{name}.attn"), d_model, n_heads, strict, rng)?;
        let norm1 = LayerNorm::new(store, &format!("{name}.norm1"), d_model);
        let ffn = FeedForward::new(store, &format!("{name}.ffn"), d_model, d_ff, rng);
        let norm2 = LayerNorm::new(store, &format!("{name}.norm2"), d_model);
        Ok(EncoderBlock { attention, norm1, ffn, norm2, dropout })
    }

    /// `x: [b, n, d_model]`; `key_mask: [b * n]`, true at padded positions.
    pub fn forward<F: Scalar>(&self, s: &mut Session<'_, F>, x: Var, key_mask: Option<&[bool]>) -> Result<Var, TensorError> {
        let att = self.attention.forward(s, x, key_mask)?;
        let att = s.dropout(att, self.dropout)?;
        let r = s.tape.add(att, x)?;
        let r = self.norm1.forward(s, r)?;
        let f = self.ffn.forward(s, r)?;
        let f = s.dropout(f, self.dropout)?;
        let out = s.tape.add(r, f)?;
        self.norm2.forward(s, out)
    }
}
