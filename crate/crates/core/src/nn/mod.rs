//! Neural building blocks evaluated on a [`Tape`].
//!
//! Parameters live in a [`ParamStore`]; layers only hold [`ParamId`]s. A
//! [`Session`] binds the store to a fresh tape for one forward pass, lazily
//! registering each parameter the first time a layer touches it, and turns
//! the tape gradients back into per-parameter [`Grad`]s after backward.

mod attention;
mod encoder;
mod layers;
mod recurrent;

use std::collections::BTreeMap;

use crate::tensor::gradcheck::{relative_error, GradCheckReport};
use crate::tensor::{lit, Generator, Scalar, Tape, Tensor, TensorError, Var};

pub use attention::{attention_pool, AttentionPool, MultiHeadAttention};
pub use encoder::{EncoderBlock, FeedForward};
pub use layers::{predict, ClassifyHead, LayerNorm, Linear, LN_EPS};
pub use recurrent::{CellKind, GruCell, GruGates, LstmCell, Recurrent, RecurrentOutput, RnnCell};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<F: Scalar> {
    pub name: String,
    pub value: Tensor<F>,
    pub trainable: bool,
    /// Row of a rank-2 table that is held fixed and excluded from gradients.
    pub frozen_row: Option<usize>,
}

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<F: Scalar> {
    entries: Vec<ParamEntry<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    /// Registers a tensor; names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        self.entries.push(ParamEntry { name, value, trainable: true, frozen_row: None });
        ParamId(self.entries.len() - 1)
    }

    /// Weight matrix drawn from uniform(-sqrt(1/fan_in), sqrt(1/fan_in)).
    pub fn add_weight(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut Generator) -> ParamId {
        let bound = (1.0 / fan_in as f64).sqrt();
        self.add(name, rng.uniform(shape, -bound, bound))
    }

    pub fn add_filled(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        self.add(name, Tensor::full(shape, lit(value)))
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    /// Holds one row of a rank-2 table fixed under lookups and updates.
    pub fn freeze_row(&mut self, id: ParamId, row: usize) {
        let e = &mut self.entries[id.0];
        assert!(e.value.rank() == 2 && row < e.value.shape()[0], "cannot freeze row {row} of {}", e.name);
        e.frozen_row = Some(row);
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<F>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.entries.iter().filter(|e| e.name.starts_with(prefix)).map(|e| e.value.len()).sum()
    }

    /// Little-endian dump of every tensor in registration order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.count() * F::BYTES);
        for e in &self.entries {
            for &v in e.value.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.all_finite())
    }
}

/// Gradient of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum Grad<F: Scalar> {
    Dense(Tensor<F>),
    /// Row gradients of an embedding table, keyed by row and sorted.
    Rows { dim: usize, rows: Vec<(usize, Vec<F>)> },
}

impl<F: Scalar> Grad<F> {
    pub fn to_dense(&self, shape: &[usize]) -> Tensor<F> {
        match self {
            Grad::Dense(t) => t.clone(),
            Grad::Rows { dim, rows } => {
                let mut t = Tensor::zeros(shape);
                for (r, g) in rows {
                    t.data_mut()[r * dim..(r + 1) * dim].copy_from_slice(g);
                }
                t
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        match self {
            Grad::Dense(t) => t.all_finite(),
            Grad::Rows { rows, .. } => rows.iter().all(|(_, g)| g.iter().all(|v| v.is_finite())),
        }
    }
}

/// Per-parameter gradients from one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F: Scalar> {
    grads: Vec<Option<Grad<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, id: ParamId) -> Option<&Grad<F>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Dense gradient, zero for parameters the loss does not reach.
    pub fn dense(&self, store: &ParamStore<F>, id: ParamId) -> Tensor<F> {
        let shape = store.get(id).shape();
        self.get(id).map(|g| g.to_dense(shape)).unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(Grad::all_finite)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Grad<F>)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

struct Lookup {
    table: ParamId,
    indices: Vec<usize>,
    frozen_row: Option<usize>,
    var: Var,
}

/// One forward (and optionally backward) pass over a [`ParamStore`].
///
/// Built with a dropout generator the session is in training mode; without
/// one, dropout is the identity.
pub struct Session<'a, F: Scalar> {
    pub tape: Tape<F>,
    store: &'a ParamStore<F>,
    vars: Vec<Option<Var>>,
    lookups: Vec<Lookup>,
    rng: Option<&'a mut Generator>,
}

impl<'a, F: Scalar> Session<'a, F> {
    pub fn eval(store: &'a ParamStore<F>) -> Self {
        Session { tape: Tape::new(), store, vars: vec![None; store.len()], lookups: Vec::new(), rng: None }
    }

    pub fn train(store: &'a ParamStore<F>, rng: &'a mut Generator) -> Self {
        Session { rng: Some(rng), ..Session::eval(store) }
    }

    pub fn training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn store(&self) -> &ParamStore<F> {
        self.store
    }

    /// Tape variable for a parameter, registered on first use.
    pub fn var(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let e = self.store.entry(id);
        let v = self.tape.leaf(e.value.clone(), e.trainable);
        self.vars[id.0] = Some(v);
        v
    }

    /// Inverted dropout in training mode, identity otherwise.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var, TensorError> {
        match self.rng.as_deref_mut() {
            Some(rng) => self.tape.dropout(x, p, rng),
            None => Ok(x),
        }
    }

    /// Gathers table rows for `indices` (shape `index_shape`) without putting
    /// the whole table on the tape. The table's frozen row never receives a
    /// gradient.
    pub fn lookup(&mut self, table: ParamId, indices: &[usize], index_shape: &[usize]) -> Result<Var, TensorError> {
        let e = self.store.entry(table);
        let frozen_row = e.frozen_row;
        let ts = e.value.shape();
        let (rows, d) = (ts[0], ts[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Invalid { op: "lookup", msg: format!("index {bad} out of range for {rows} rows") });
        }
        let src = e.value.data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let mut shape = index_shape.to_vec();
        shape.push(d);
        let value = Tensor::new(shape, out)?;
        let var = self.tape.leaf(value, e.trainable);
        if e.trainable {
            self.lookups.push(Lookup { table, indices: indices.to_vec(), frozen_row, var });
        }
        Ok(var)
    }

    /// Runs backward from `loss` and collects gradients per parameter.
    pub fn backward(mut self, loss: Var) -> Result<Gradients<F>, TensorError> {
        self.tape.backward(loss)?;
        let mut grads: Vec<Option<Grad<F>>> = self
            .vars
            .iter()
            .map(|v| v.and_then(|v| self.tape.grad(v)).map(|g| Grad::Dense(g.clone())))
            .collect();
        let mut sparse: BTreeMap<ParamId, BTreeMap<usize, Vec<F>>> = BTreeMap::new();
        for lk in &self.lookups {
            let Some(g) = self.tape.grad(lk.var) else { continue };
            let d = self.store.get(lk.table).shape()[1];
            let rows = sparse.entry(lk.table).or_default();
            for (pos, &i) in lk.indices.iter().enumerate() {
                if Some(i) == lk.frozen_row {
                    continue;
                }
                let acc = rows.entry(i).or_insert_with(|| vec![F::zero(); d]);
                for (a, &v) in acc.iter_mut().zip(&g.data()[pos * d..(pos + 1) * d]) {
                    *a += v;
                }
            }
        }
        for (id, rows) in sparse {
            let d = self.store.get(id).shape()[1];
            let rows: Vec<(usize, Vec<F>)> = rows.into_iter().collect();
            grads[id.0] = Some(match grads[id.0].take() {
                None => Grad::Rows { dim: d, rows },
                Some(Grad::Dense(mut t)) => {
                    for (r, g) in rows {
                        for (a, v) in t.data_mut()[r * d..(r + 1) * d].iter_mut().zip(g) {
                            *a += v;
                        }
                    }
                    Grad::Dense(t)
                }
                Some(other) => other,
            });
        }
        Ok(Gradients { grads })
    }
}

/// `p <- p - lr * g` for every parameter with a gradient.
pub fn sgd_update<F: Scalar>(store: &mut ParamStore<F>, grads: &Gradients<F>, lr: F) {
    for (id, g) in grads.iter() {
        if !store.entry(id).trainable {
            continue;
        }
        let p = store.get_mut(id);
        match g {
            Grad::Dense(t) => {
                for (w, &d) in p.data_mut().iter_mut().zip(t.data()) {
                    *w -= lr * d;
                }
            }
            Grad::Rows { dim, rows } => {
                for (r, gr) in rows {
                    for (w, &d) in p.data_mut()[r * dim..(r + 1) * dim].iter_mut().zip(gr) {
                        *w -= lr * d;
                    }
                }
            }
        }
    }
}

/// Central-difference check of the analytic gradients of every trainable
/// parameter in `store` for the scalar produced by `forward`. Frozen table
/// rows are not parameters and are skipped.
///
/// Both sides run without dropout; the numeric side only evaluates forwards.
pub fn check_param_gradients<Fw>(store: &ParamStore<f64>, step: f64, forward: Fw) -> Result<GradCheckReport, TensorError>
where
    Fw: Fn(&mut Session<'_, f64>) -> Result<Var, TensorError>,
{
    let mut s = Session::eval(store);
    let loss = forward(&mut s)?;
    let grads = s.backward(loss)?;
    let eval = |st: &ParamStore<f64>| -> Result<f64, TensorError> {
        let mut s = Session::eval(st);
        let out = forward(&mut s)?;
        s.tape.value(out).item().ok_or_else(|| TensorError::NonScalarLoss(s.tape.shape(out).to_vec()))
    };
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), analytic_at_worst: 0.0, numeric_at_worst: 0.0, elements_checked: 0 };
    let mut work = store.clone();
    for id in store.ids().filter(|&id| store.entry(id).trainable) {
        let analytic = grads.dense(store, id);
        let entry = store.entry(id);
        let frozen = |j: usize| entry.frozen_row.is_some_and(|r| j / entry.value.shape()[1] == r);
        for j in (0..entry.value.len()).filter(|&j| !frozen(j)) {
            let orig = store.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + step;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig - step;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data()[j];
            let err = relative_error(a, numeric);
            if err > report.max_rel_error || report.elements_checked == 0 {
                report = GradCheckReport { max_rel_error: err, worst: (id.index(), j), analytic_at_worst: a, numeric_at_worst: numeric, ..report };
            }
            report.elements_checked += 1;
        }
    }
    Ok(report)
}
