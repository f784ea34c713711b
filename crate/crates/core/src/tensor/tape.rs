use std::sync::atomic::{AtomicU32, Ordering};

use super::kernels::{self, Broadcast, MatmulPlan};
use super::{lit, Generator, Scalar, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Score written into masked attention positions before the softmax.
///
/// Large and finite so the result of every forward op stays finite; after
/// max-subtraction `exp` of it underflows to exactly zero.
pub const MASKED_SCORE: f64 = -1e9;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    idx: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx as usize
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul { a: usize, b: usize, plan: MatmulPlan },
    Add { a: usize, b: usize, bc: Broadcast },
    Sub { a: usize, b: usize, bc: Broadcast },
    Mul { a: usize, b: usize, bc: Broadcast },
    Scale { x: usize, s: F },
    OneMinus { x: usize },
    Sigmoid { x: usize },
    Tanh { x: usize },
    Relu { x: usize },
    Softmax { x: usize, axis: usize },
    LogSoftmax { x: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<F>, inv_std: Vec<F> },
    Concat { parts: Vec<(usize, usize)> },
    Transpose { x: usize },
    Reshape { x: usize },
    Embed { table: usize, indices: Vec<usize>, frozen_row: Option<usize> },
    SelectStep { x: usize, t: usize },
    Stack { parts: Vec<usize> },
    Dropout { x: usize, scale: Vec<F> },
    MaskKeys { x: usize, masked: Vec<bool> },
    Sum { x: usize },
    Nll { x: usize, labels: Vec<usize> },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Ordered record of differentiable operations.
///
/// Nodes are appended in execution order, so node indices are a topological
/// order by construction. A tape is single-use: after [`Tape::backward`] the
/// gradients can be read but a second backward is rejected.
pub struct Tape<F> {
    id: u32,
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Tensor<F>>>,
    backward_done: bool,
}

impl<F: Scalar> std::fmt::Debug for Tape<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("nodes", &self.nodes.len())
            .field("backward_done", &self.backward_done)
            .finish()
    }
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a gradient-enabled leaf.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Registers a leaf with an explicit gradient flag.
    pub fn leaf(&mut self, value: Tensor<F>, grad_enabled: bool) -> Var {
        self.push_raw(value, Op::Leaf, grad_enabled)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        self.check(v).expect("var from this tape");
        &self.nodes[v.index()].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index()].requires_grad
    }

    /// Gradient of the last backward's loss with respect to a gradient-enabled
    /// leaf. `None` before backward, for non-leaves, and for leaves the loss
    /// does not depend on.
    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        if v.tape != self.id {
            return None;
        }
        self.grads.get(v.index()).and_then(|g| g.as_ref())
    }

    fn check(&self, v: Var) -> Result<usize, TensorError> {
        if v.tape != self.id || v.index() >= self.nodes.len() {
            return Err(TensorError::ForeignVar);
        }
        Ok(v.index())
    }

    fn push_raw(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node { value, op, requires_grad });
        Var { tape: self.id, idx }
    }

    fn push(&mut self, name: &'static str, value: Tensor<F>, op: Op<F>, inputs: &[usize]) -> Result<Var, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let rg = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push_raw(value, op, rg))
    }

    fn val(&self, i: usize) -> &Tensor<F> {
        &self.nodes[i].value
    }

    // ----------------------------------------------------------------- ops

    /// Batched matrix product `[.., m, k] x [.., k, n]`; leading batch axes
    /// must be equal or 1 (missing axes count as 1).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let plan = kernels::plan_matmul(self.val(ia).shape(), self.val(ib).shape())?;
        let (m, k, n) = (plan.m, plan.k, plan.n);
        let mut out = vec![F::zero(); plan.pairs.len() * m * n];
        {
            let (ad, bd) = (self.val(ia).data(), self.val(ib).data());
            for (bi, &(pa, pb)) in plan.pairs.iter().enumerate() {
                kernels::gemm_nn(
                    &ad[pa * m * k..(pa + 1) * m * k],
                    &bd[pb * k * n..(pb + 1) * k * n],
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let value = Tensor::from_parts(plan.out_shape.clone(), out);
        self.push("matmul", value, Op::MatMul { a: ia, b: ib, plan }, &[ia, ib])
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
        mk: impl FnOnce(usize, usize, Broadcast) -> Op<F>,
    ) -> Result<Var, TensorError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (shape, bc) = kernels::plan_broadcast(name, self.val(ia).shape(), self.val(ib).shape())?;
        let (ad, bd) = (self.val(ia).data(), self.val(ib).data());
        let out: Vec<F> = match bc {
            Broadcast::None => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Rhs => ad.iter().enumerate().map(|(i, &x)| f(x, bd[i % bd.len()])).collect(),
            Broadcast::Lhs => bd.iter().enumerate().map(|(i, &y)| f(ad[i % ad.len()], y)).collect(),
        };
        self.push(name, Tensor::from_parts(shape, out), mk(ia, ib, bc), &[ia, ib])
    }

    /// Elementwise sum; the smaller operand may repeat along leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, |a, b, bc| Op::Add { a, b, bc })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, |a, b, bc| Op::Sub { a, b, bc })
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, |a, b, bc| Op::Mul { a, b, bc })
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(F) -> F, mk: impl FnOnce(usize) -> Op<F>) -> Result<Var, TensorError> {
        let ix = self.check(x)?;
        let src = self.val(ix);
        let out = Tensor::from_parts(src.shape().to_vec(), src.data().iter().map(|&v| f(v)).collect());
        self.push(name, out, mk(ix), &[ix])
    }

    pub fn scale(&mut self, x: Var, s: F) -> Result<Var, TensorError> {
        self.unary("scale", x, |v| v * s, |x| Op::Scale { x, s })
    }

    /// `1 - x` elementwise.
    pub fn one_minus(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("one_minus", x, |v| F::one() - v, |x| Op::OneMinus { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("sigmoid", x, sigmoid, |x| Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("tanh", x, |v| v.tanh(), |x| Op::Tanh { x })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("relu", x, |v| if v > F::zero() { v } else { F::zero() }, |x| Op::Relu { x })
    }

    /// Softmax along `axis`, computed after subtracting the slice maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let ix = self.check(x)?;
        let shape = self.val(ix).shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::invalid("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, len, inner) = kernels::axis_split(&shape, axis);
        let mut out = vec![F::zero(); self.val(ix).len()];
        kernels::softmax_forward(self.val(ix).data(), &mut out, outer, len, inner);
        self.push("softmax", Tensor::from_parts(shape, out), Op::Softmax { x: ix, axis }, &[ix])
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let ix = self.check(x)?;
        let shape = self.val(ix).shape().to_vec();
        let len = *shape.last().ok_or_else(|| TensorError::invalid("log_softmax", "rank-0 input"))?;
        let mut out = vec![F::zero(); self.val(ix).len()];
        kernels::log_softmax_rows(self.val(ix).data(), &mut out, len);
        self.push("log_softmax", Tensor::from_parts(shape, out), Op::LogSoftmax { x: ix }, &[ix])
    }

    /// Layer normalization over the last axis followed by `gain * y + bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: F) -> Result<Var, TensorError> {
        let (ix, ig, ib) = (self.check(x)?, self.check(gain)?, self.check(bias)?);
        let shape = self.val(ix).shape().to_vec();
        let d = *shape.last().ok_or_else(|| TensorError::invalid("layernorm", "rank-0 input"))?;
        for i in [ig, ib] {
            if self.val(i).shape() != [d] {
                return Err(TensorError::Shape { op: "layernorm", lhs: shape.clone(), rhs: self.val(i).shape().to_vec() });
            }
        }
        let xd = self.val(ix).data();
        let (g, b) = (self.val(ig).data(), self.val(ib).data());
        let rows = xd.len() / d;
        let dn = lit::<F>(d as f64);
        let mut xhat = vec![F::zero(); xd.len()];
        let mut inv_std = vec![F::zero(); rows];
        let mut out = vec![F::zero(); xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<F>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / dn;
            let is = F::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let op = Op::LayerNorm { x: ix, gain: ig, bias: ib, xhat, inv_std };
        self.push("layernorm", Tensor::from_parts(shape, out), op, &[ix, ig, ib])
    }

    /// Concatenates along the last axis; all other extents must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::invalid("concat", "no inputs"));
        }
        let idx: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect::<Result<_, _>>()?;
        let first = self.val(idx[0]).shape().to_vec();
        let lead = &first[..first.len().saturating_sub(1)];
        if first.is_empty() {
            return Err(TensorError::invalid("concat", "rank-0 input"));
        }
        let mut widths = Vec::with_capacity(idx.len());
        for &i in &idx {
            let s = self.val(i).shape();
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(TensorError::Shape { op: "concat", lhs: first.clone(), rhs: s.to_vec() });
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&i, &w) in idx.iter().zip(&widths) {
                out.extend_from_slice(&self.val(i).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let op = Op::Concat { parts: idx.iter().copied().zip(widths).collect() };
        self.push("concat", Tensor::from_parts(shape, out), op, &idx)
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let ix = self.check(x)?;
        let shape = self.val(ix).shape().to_vec();
        if shape.len() < 2 {
            return Err(TensorError::invalid("transpose", format!("needs rank >= 2, got {shape:?}")));
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let out = transpose_blocks(self.val(ix).data(), r, c);
        let mut new_shape = shape;
        let n = new_shape.len();
        new_shape.swap(n - 2, n - 1);
        self.push("transpose", Tensor::from_parts(new_shape, out), Op::Transpose { x: ix }, &[ix])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let ix = self.check(x)?;
        let value = self.val(ix).reshaped(shape).map_err(|_| TensorError::Shape {
            op: "reshape",
            lhs: self.val(ix).shape().to_vec(),
            rhs: shape.to_vec(),
        })?;
        self.push("reshape", value, Op::Reshape { x: ix }, &[ix])
    }

    /// Row lookup: `out[.., :] = table[indices[..], :]` with output shape
    /// `index_shape + [d]`. Rows equal to `frozen_row` receive no gradient.
    pub fn embed(&mut self, table: Var, indices: &[usize], index_shape: &[usize], frozen_row: Option<usize>) -> Result<Var, TensorError> {
        let it = self.check(table)?;
        let ts = self.val(it).shape().to_vec();
        if ts.len() != 2 {
            return Err(TensorError::invalid("embed", format!("table must be rank 2, got {ts:?}")));
        }
        if index_shape.iter().product::<usize>() != indices.len() {
            return Err(TensorError::invalid("embed", "index shape does not match index count"));
        }
        let (rows, d) = (ts[0], ts[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::invalid("embed", format!("index {bad} out of range for {rows} rows")));
        }
        let td = self.val(it).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        let mut shape = index_shape.to_vec();
        shape.push(d);
        let op = Op::Embed { table: it, indices: indices.to_vec(), frozen_row };
        self.push("embed", Tensor::from_parts(shape, out), op, &[it])
    }

    /// `x[:, t, :]` of a rank-3 tensor.
    pub fn select_step(&mut self, x: Var, t: usize) -> Result<Var, TensorError> {
        let ix = self.check(x)?;
        let s = self.val(ix).shape().to_vec();
        if s.len() != 3 || t >= s[1] {
            return Err(TensorError::invalid("select_step", format!("step {t} of shape {s:?}")));
        }
        let (b, n, d) = (s[0], s[1], s[2]);
        let src = self.val(ix).data();
        let mut out = Vec::with_capacity(b * d);
        for bi in 0..b {
            let off = (bi * n + t) * d;
            out.extend_from_slice(&src[off..off + d]);
        }
        self.push("select_step", Tensor::from_parts(vec![b, d], out), Op::SelectStep { x: ix, t }, &[ix])
    }

    /// Stacks `[b, d]` tensors into `[b, parts.len(), d]`.
    pub fn stack_steps(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::invalid("stack_steps", "no inputs"));
        }
        let idx: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect::<Result<_, _>>()?;
        let s0 = self.val(idx[0]).shape().to_vec();
        if s0.len() != 2 {
            return Err(TensorError::invalid("stack_steps", format!("inputs must be rank 2, got {s0:?}")));
        }
        for &i in &idx {
            if self.val(i).shape() != s0.as_slice() {
                return Err(TensorError::Shape { op: "stack_steps", lhs: s0.clone(), rhs: self.val(i).shape().to_vec() });
            }
        }
        let (b, d, n) = (s0[0], s0[1], idx.len());
        let mut out = vec![F::zero(); b * n * d];
        for (t, &i) in idx.iter().enumerate() {
            let src = self.val(i).data();
            for bi in 0..b {
                out[(bi * n + t) * d..(bi * n + t + 1) * d].copy_from_slice(&src[bi * d..(bi + 1) * d]);
            }
        }
        self.push("stack_steps", Tensor::from_parts(vec![b, n, d], out), Op::Stack { parts: idx.clone() }, &idx)
    }

    /// Inverted dropout with drop probability `p`. `p == 0` returns `x` itself.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Generator) -> Result<Var, TensorError> {
        let ix = self.check(x)?;
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::invalid("dropout", format!("rate {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = lit::<F>(1.0 / (1.0 - p));
        let mask = rng.bernoulli_mask(self.val(ix).len(), p);
        let scale: Vec<F> = mask.iter().map(|&k| if k { keep } else { F::zero() }).collect();
        let src = self.val(ix);
        let out = src.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
        let value = Tensor::from_parts(src.shape().to_vec(), out);
        self.push("dropout", value, Op::Dropout { x: ix, scale }, &[ix])
    }

    /// For scores `[b, q, k]` and a key mask `[b, k]` (true = masked), writes
    /// [`MASKED_SCORE`] into every masked key column.
    pub fn mask_keys(&mut self, x: Var, key_mask: &[bool]) -> Result<Var, TensorError> {
        let ix = self.check(x)?;
        let s = self.val(ix).shape().to_vec();
        if s.len() != 3 || key_mask.len() != s[0] * s[2] {
            return Err(TensorError::invalid("mask_keys", format!("mask of {} for scores {s:?}", key_mask.len())));
        }
        let (b, q, k) = (s[0], s[1], s[2]);
        let fill = lit::<F>(MASKED_SCORE);
        let mut out = self.val(ix).data().to_vec();
        let mut masked = vec![false; out.len()];
        for bi in 0..b {
            for qi in 0..q {
                for ki in 0..k {
                    if key_mask[bi * k + ki] {
                        let at = (bi * q + qi) * k + ki;
                        out[at] = fill;
                        masked[at] = true;
                    }
                }
            }
        }
        self.push("mask_keys", Tensor::from_parts(s, out), Op::MaskKeys { x: ix, masked }, &[ix])
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let ix = self.check(x)?;
        let s = self.val(ix).data().iter().copied().sum::<F>();
        self.push("sum", Tensor::scalar(s), Op::Sum { x: ix }, &[ix])
    }

    /// Mean negative log-likelihood of `labels` under row log-probabilities
    /// `[b, c]`.
    pub fn nll(&mut self, log_probs: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let ix = self.check(log_probs)?;
        let s = self.val(ix).shape().to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(TensorError::invalid("nll", format!("log-probs {s:?} with {} labels", labels.len())));
        }
        let c = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::invalid("nll", format!("label {bad} out of range for {c} classes")));
        }
        let d = self.val(ix).data();
        let total: F = labels.iter().enumerate().map(|(i, &l)| -d[i * c + l]).sum();
        let loss = total / lit(labels.len() as f64);
        self.push("nll", Tensor::scalar(loss), Op::Nll { x: ix, labels: labels.to_vec() }, &[ix])
    }

    // ------------------------------------------------------------ backward

    /// Populates gradients of the scalar `loss` for every gradient-enabled leaf.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let il = self.check(loss)?;
        if self.backward_done {
            return Err(TensorError::AlreadyBackward);
        }
        let ls = self.nodes[il].value.shape();
        if ls.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(ls.to_vec()));
        }
        if !self.nodes[il].requires_grad {
            return Err(TensorError::Detached);
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(vec![F::one()]);

        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }

        self.grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let n = &self.nodes[i];
                match (&n.op, g) {
                    (Op::Leaf, Some(g)) if n.requires_grad => Some(Tensor::from_parts(n.value.shape().to_vec(), g)),
                    _ => None,
                }
            })
            .collect();
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let nodes = &self.nodes;
        let wants = |j: usize| nodes[j].requires_grad;
        let y = nodes[i].value.data();

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b, plan } => {
                let (m, k, n) = (plan.m, plan.k, plan.n);
                if wants(*a) {
                    let bd = nodes[*b].value.data();
                    let ga = slot(grads, *a, nodes[*a].value.len());
                    for (bi, &(pa, pb)) in plan.pairs.iter().enumerate() {
                        kernels::gemm_nt(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &bd[pb * k * n..(pb + 1) * k * n],
                            &mut ga[pa * m * k..(pa + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                }
                if wants(*b) {
                    let ad = nodes[*a].value.data();
                    let gb = slot(grads, *b, nodes[*b].value.len());
                    for (bi, &(pa, pb)) in plan.pairs.iter().enumerate() {
                        kernels::gemm_tn(
                            &ad[pa * m * k..(pa + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &mut gb[pb * k * n..(pb + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            Op::Add { a, b, bc } | Op::Sub { a, b, bc } | Op::Mul { a, b, bc } => {
                let op = &nodes[i].op;
                let (ad, bd) = (nodes[*a].value.data(), nodes[*b].value.data());
                let (la, lb) = (ad.len(), bd.len());
                // index of the operand element feeding output element `o`
                let ia = |o: usize| if *bc == Broadcast::Lhs { o % la } else { o };
                let ib = |o: usize| if *bc == Broadcast::Rhs { o % lb } else { o };
                if wants(*a) {
                    let ga = slot(grads, *a, la);
                    for (o, &go) in g.iter().enumerate() {
                        ga[ia(o)] += match op {
                            Op::Mul { .. } => go * bd[ib(o)],
                            _ => go,
                        };
                    }
                }
                if wants(*b) {
                    let gb = slot(grads, *b, lb);
                    for (o, &go) in g.iter().enumerate() {
                        gb[ib(o)] += match op {
                            Op::Mul { .. } => go * ad[ia(o)],
                            Op::Sub { .. } => -go,
                            _ => go,
                        };
                    }
                }
            }
            Op::Scale { x, s } => {
                let gx = slot(grads, *x, g.len());
                for (d, &go) in gx.iter_mut().zip(g) {
                    *d += go * *s;
                }
            }
            Op::OneMinus { x } => {
                let gx = slot(grads, *x, g.len());
                for (d, &go) in gx.iter_mut().zip(g) {
                    *d -= go;
                }
            }
            Op::Sigmoid { x } => {
                let gx = slot(grads, *x, g.len());
                for ((d, &go), &yv) in gx.iter_mut().zip(g).zip(y) {
                    *d += go * yv * (F::one() - yv);
                }
            }
            Op::Tanh { x } => {
                let gx = slot(grads, *x, g.len());
                for ((d, &go), &yv) in gx.iter_mut().zip(g).zip(y) {
                    *d += go * (F::one() - yv * yv);
                }
            }
            Op::Relu { x } => {
                let xd = nodes[*x].value.data();
                let gx = slot(grads, *x, g.len());
                for ((d, &go), &xv) in gx.iter_mut().zip(g).zip(xd) {
                    if xv > F::zero() {
                        *d += go;
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = kernels::axis_split(nodes[i].value.shape(), *axis);
                let gx = slot(grads, *x, g.len());
                for o in 0..outer {
                    for c in 0..inner {
                        let base = o * len * inner + c;
                        let mut dot = F::zero();
                        for j in 0..len {
                            dot += g[base + j * inner] * y[base + j * inner];
                        }
                        for j in 0..len {
                            let at = base + j * inner;
                            gx[at] += y[at] * (g[at] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax { x } => {
                let len = *nodes[i].value.shape().last().expect("rank >= 1");
                let gx = slot(grads, *x, g.len());
                for ((gr, yr), dr) in g.chunks(len).zip(y.chunks(len)).zip(gx.chunks_mut(len)) {
                    let total: F = gr.iter().copied().sum();
                    for ((d, &go), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *d += go - yv.exp() * total;
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let gd = nodes[*gain].value.data();
                let d = gd.len();
                if wants(*gain) {
                    let gg = slot(grads, *gain, d);
                    for (r, gr) in g.chunks(d).enumerate() {
                        for j in 0..d {
                            gg[j] += gr[j] * xhat[r * d + j];
                        }
                    }
                }
                if wants(*bias) {
                    let gb = slot(grads, *bias, d);
                    for gr in g.chunks(d) {
                        for j in 0..d {
                            gb[j] += gr[j];
                        }
                    }
                }
                if wants(*x) {
                    let gx = slot(grads, *x, g.len());
                    let dn = lit::<F>(d as f64);
                    for (r, gr) in g.chunks(d).enumerate() {
                        let h = &xhat[r * d..(r + 1) * d];
                        let mut mean_g = F::zero();
                        let mut mean_gh = F::zero();
                        for j in 0..d {
                            let gh = gr[j] * gd[j];
                            mean_g += gh;
                            mean_gh += gh * h[j];
                        }
                        mean_g = mean_g / dn;
                        mean_gh = mean_gh / dn;
                        for j in 0..d {
                            let gh = gr[j] * gd[j];
                            gx[r * d + j] += inv_std[r] * (gh - mean_g - h[j] * mean_gh);
                        }
                    }
                }
            }
            Op::Concat { parts } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let rows = g.len() / total;
                let mut off = 0;
                for &(p, w) in parts {
                    if wants(p) {
                        let gp = slot(grads, p, rows * w);
                        for r in 0..rows {
                            for j in 0..w {
                                gp[r * w + j] += g[r * total + off + j];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::Transpose { x } => {
                let s = nodes[i].value.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let back = transpose_blocks(g, r, c);
                let gx = slot(grads, *x, g.len());
                for (d, v) in gx.iter_mut().zip(back) {
                    *d += v;
                }
            }
            Op::Reshape { x } => {
                let gx = slot(grads, *x, g.len());
                for (d, &v) in gx.iter_mut().zip(g) {
                    *d += v;
                }
            }
            Op::Embed { table, indices, frozen_row } => {
                let d = nodes[*table].value.shape()[1];
                let gt = slot(grads, *table, nodes[*table].value.len());
                for (pos, &row) in indices.iter().enumerate() {
                    if Some(row) == *frozen_row {
                        continue;
                    }
                    for j in 0..d {
                        gt[row * d + j] += g[pos * d + j];
                    }
                }
            }
            Op::SelectStep { x, t } => {
                let s = nodes[*x].value.shape();
                let (n, d) = (s[1], s[2]);
                let b = s[0];
                let gx = slot(grads, *x, b * n * d);
                for bi in 0..b {
                    for j in 0..d {
                        gx[(bi * n + t) * d + j] += g[bi * d + j];
                    }
                }
            }
            Op::Stack { parts } => {
                let s = nodes[i].value.shape();
                let (b, n, d) = (s[0], s[1], s[2]);
                for (t, &p) in parts.iter().enumerate() {
                    if wants(p) {
                        let gp = slot(grads, p, b * d);
                        for bi in 0..b {
                            for j in 0..d {
                                gp[bi * d + j] += g[(bi * n + t) * d + j];
                            }
                        }
                    }
                }
            }
            Op::Dropout { x, scale } => {
                let gx = slot(grads, *x, g.len());
                for ((d, &go), &s) in gx.iter_mut().zip(g).zip(scale) {
                    *d += go * s;
                }
            }
            Op::MaskKeys { x, masked } => {
                let gx = slot(grads, *x, g.len());
                for ((d, &go), &m) in gx.iter_mut().zip(g).zip(masked) {
                    if !m {
                        *d += go;
                    }
                }
            }
            Op::Sum { x } => {
                let gx = slot(grads, *x, nodes[*x].value.len());
                for d in gx.iter_mut() {
                    *d += g[0];
                }
            }
            Op::Nll { x, labels } => {
                let c = nodes[*x].value.shape()[1];
                let w = g[0] / lit(labels.len() as f64);
                let gx = slot(grads, *x, nodes[*x].value.len());
                for (r, &l) in labels.iter().enumerate() {
                    gx[r * c + l] -= w;
                }
            }
        }
    }
}

fn slot<F: Scalar>(grads: &mut [Option<Vec<F>>], i: usize, len: usize) -> &mut Vec<F> {
    grads[i].get_or_insert_with(|| vec![F::zero(); len])
}

#[inline]
fn sigmoid<F: Scalar>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

/// Transposes every trailing `[r, c]` block of a buffer.
fn transpose_blocks<F: Scalar>(src: &[F], r: usize, c: usize) -> Vec<F> {
    let mut out = vec![F::zero(); src.len()];
    for (blk_in, blk_out) in src.chunks(r * c).zip(out.chunks_mut(r * c)) {
        for i in 0..r {
            for j in 0..c {
                blk_out[j * r + i] = blk_in[i * c + j];
            }
        }
    }
    out
}
