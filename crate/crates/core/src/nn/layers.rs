use crate::tensor::{lit, Generator, Scalar, Tensor, TensorError, Var};

use super::{ParamId, ParamStore, Session};

pub const LN_EPS: f64 = 1e-5;

/// `x W + b` over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut Generator) -> Self {
        let w = store.add_weight(format!("{name}.w"), &[d_in, d_out], d_in, rng);
        let b = bias.then(|| store.add_filled(format!("{name}.b"), &[d_out], 0.0));
        Linear { w, b, d_in, d_out }
    }

    pub fn forward<F: Scalar>(&self, s: &mut Session<'_, F>, x: Var) -> Result<Var, TensorError> {
        let w = s.var(self.w);
        let y = s.tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = s.var(b);
                s.tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, d: usize) -> Self {
        LayerNorm { gain: store.add_filled(format!("{name}.gain"), &[d], 1.0), bias: store.add_filled(format!("{name}.bias"), &[d], 0.0) }
    }

    pub fn forward<F: Scalar>(&self, s: &mut Session<'_, F>, x: Var) -> Result<Var, TensorError> {
        let (g, b) = (s.var(self.gain), s.var(self.bias));
        s.tape.layernorm(x, g, b, lit(LN_EPS))
    }
}

/// Linear layer to two classes followed by log-softmax.
#[derive(Debug, Clone)]
pub struct ClassifyHead {
    pub linear: Linear,
}

impl ClassifyHead {
    pub const CLASSES: usize = 2;

    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, d: usize, rng: &mut Generator) -> Self {
        ClassifyHead { linear: Linear::new(store, name, d, Self::CLASSES, true, rng) }
    }

    pub fn forward<F: Scalar>(&self, s: &mut Session<'_, F>, h: Var) -> Result<Var, TensorError> {
        let logits = self.linear.forward(s, h)?;
        s.tape.log_softmax(logits)
    }
}

/// Row-wise argmax of `[b, c]` scores; ties go to the lower class.
pub fn predict<F: Scalar>(scores: &Tensor<F>) -> Vec<usize> {
    let c = *scores.shape().last().expect("rank >= 1");
    scores
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
