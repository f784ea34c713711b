use crate::tensor::{lit, Generator, Scalar, Tape, TensorError, Var};

use super::{ParamId, ParamStore, Session};

#[derive(Debug, Clone)]
struct HeadProjections {
    q: ParamId,
    k: ParamId,
    v: ParamId,
}

/// Multi-head scaled dot-product self-attention.
///
/// Each head projects the input with its own `[d_model, d_k]` query, key and
/// value matrices (`d_k = d_model / n_heads`); head outputs are concatenated
/// and mapped back to `d_model` by the output matrix. In strict mode the
/// heads use the input itself as query, key and value (`d_k = d_model`), so
/// only the output matrix is learned.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    heads: Vec<Option<HeadProjections>>,
    pub output: ParamId,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_k: usize,
}

impl MultiHeadAttention {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        n_heads: usize,
        strict: bool,
        rng: &mut Generator,
    ) -> Result<Self, TensorError> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(TensorError::Invalid {
                op: "attention",
                msg: format!("d_model {d_model} is not divisible by n_heads {n_heads}"),
            });
        }
        let d_k = if strict { d_model } else { d_model / n_heads };
        let heads = (0..n_heads)
            .map(|h| {
                (!strict).then(|| HeadProjections {
                    q: store.add_weight(format!("{name}.head{h}.q"), &[d_model, d_k], d_model, rng),
                    k: store.add_weight(format!("{name}.head{h}.k"), &[d_model, d_k], d_model, rng),
                    v: store.add_weight(format!("{name}.head{h}.v"), &[d_model, d_k], d_model, rng),
                })
            })
            .collect();
        let output = store.add_weight(format!("{name}.out"), &[n_heads * d_k, d_model], n_heads * d_k, rng);
        Ok(MultiHeadAttention { heads, output, d_model, n_heads, d_k })
    }

    pub fn is_strict(&self) -> bool {
        self.heads.iter().all(Option::is_none)
    }

    pub fn head_params(&self, h: usize) -> Option<(ParamId, ParamId, ParamId)> {
        self.heads[h].as_ref().map(|p| (p.q, p.k, p.v))
    }

    pub fn forward<F: Scalar>(&self, s: &mut Session<'_, F>, x: Var, key_mask: Option<&[bool]>) -> Result<Var, TensorError> {
        self.forward_with_weights(s, x, key_mask).map(|(out, _)| out)
    }

    /// Also returns each head's `[b, n, n]` attention weights.
    pub fn forward_with_weights<F: Scalar>(
        &self,
        s: &mut Session<'_, F>,
        x: Var,
        key_mask: Option<&[bool]>,
    ) -> Result<(Var, Vec<Var>), TensorError> {
        let shape = s.tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.d_model {
            return Err(TensorError::Shape { op: "attention", lhs: shape, rhs: vec![self.d_model] });
        }
        let scale = lit::<F>(1.0 / (self.d_k as f64).sqrt());
        let mut outs = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for head in &self.heads {
            let (q, k, v) = match head {
                Some(p) => {
                    let (wq, wk, wv) = (s.var(p.q), s.var(p.k), s.var(p.v));
                    (s.tape.matmul(x, wq)?, s.tape.matmul(x, wk)?, s.tape.matmul(x, wv)?)
                }
                None => (x, x, x),
            };
            let (out, w) = scaled_dot_product(&mut s.tape, q, k, v, scale, key_mask)?;
            outs.push(out);
            weights.push(w);
        }
        let cat = if outs.len() == 1 { outs[0] } else { s.tape.concat_last(&outs)? };
        let wo = s.var(self.output);
        Ok((s.tape.matmul(cat, wo)?, weights))
    }
}

fn scaled_dot_product<F: Scalar>(
    tape: &mut Tape<F>,
    q: Var,
    k: Var,
    v: Var,
    scale: F,
    key_mask: Option<&[bool]>,
) -> Result<(Var, Var), TensorError> {
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let mut scores = tape.scale(scores, scale)?;
    if let Some(mask) = key_mask {
        scores = tape.mask_keys(scores, mask)?;
    }
    let w = tape.softmax(scores, 2)?;
    Ok((tape.matmul(w, v)?, w))
}

/// Convex combination of `states: [b, n, d]` rows with weights
/// `softmax(scores: [b, n])`; returns `[b, d]` and the weights.
pub fn attention_pool<F: Scalar>(tape: &mut Tape<F>, states: Var, scores: Var) -> Result<(Var, Var), TensorError> {
    let s = tape.shape(states).to_vec();
    if s.len() != 3 || tape.shape(scores) != [s[0], s[1]] {
        return Err(TensorError::Shape { op: "attention_pool", lhs: s, rhs: tape.shape(scores).to_vec() });
    }
    let (b, n, d) = (s[0], s[1], s[2]);
    let w = tape.softmax(scores, 1)?;
    let w3 = tape.reshape(w, &[b, 1, n])?;
    let pooled = tape.matmul(w3, states)?;
    Ok((tape.reshape(pooled, &[b, d])?, w))
}

/// Additive attention pooling: `score_t = v . tanh(W state_t)`.
#[derive(Debug, Clone)]
pub struct AttentionPool {
    pub w: ParamId,
    pub v: ParamId,
    pub d: usize,
}

impl AttentionPool {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, d: usize, rng: &mut Generator) -> Self {
        AttentionPool {
            w: store.add_weight(format!("{name}.w"), &[d, d], d, rng),
            v: store.add_weight(format!("{name}.v"), &[d, 1], d, rng),
            d,
        }
    }

    /// `states: [b, n, d]` to `([b, d], weights [b, n])`.
    pub fn forward<F: Scalar>(&self, s: &mut Session<'_, F>, states: Var) -> Result<(Var, Var), TensorError> {
        let shape = s.tape.shape(states).to_vec();
        if shape.len() != 3 || shape[2] != self.d {
            return Err(TensorError::Shape { op: "attention_pool", lhs: shape, rhs: vec![self.d] });
        }
        let (w, v) = (s.var(self.w), s.var(self.v));
        let proj = s.tape.matmul(states, w)?;
        let act = s.tape.tanh(proj)?;
        let scores = s.tape.matmul(act, v)?;
        let scores = s.tape.reshape(scores, &shape[..2])?;
        attention_pool(&mut s.tape, states, scores)
    }
}
