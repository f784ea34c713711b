use std::fmt;
use std::str::FromStr;

use crate::tensor::{Generator, Scalar, Tensor, TensorError, Var};

use super::{ParamId, ParamStore, Session};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Rnn,
    Lstm,
    Gru,
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Rnn => "RNN",
            CellKind::Lstm => "LSTM",
            CellKind::Gru => "GRU",
        })
    }
}

impl FromStr for CellKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "rnn" => Ok(CellKind::Rnn),
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            _ => Err(format!("unknown recurrent cell {s:?}")),
        }
    }
}

/// Input-side projection `x W + b` shared by every cell gate.
#[derive(Debug, Clone)]
struct Gate {
    w: ParamId,
    u: ParamId,
    b: Option<ParamId>,
}

impl Gate {
    fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, d_in: usize, hidden: usize, bias: Option<f64>, rng: &mut Generator) -> Self {
        Gate {
            w: store.add_weight(format!("{name}.w"), &[d_in, hidden], d_in, rng),
            u: store.add_weight(format!("{name}.u"), &[hidden, hidden], hidden, rng),
            b: bias.map(|v| store.add_filled(format!("{name}.b"), &[hidden], v)),
        }
    }

    fn project<F: Scalar>(&self, s: &mut Session<'_, F>, x: Var) -> Result<Var, TensorError> {
        let w = s.var(self.w);
        let p = s.tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = s.var(b);
                s.tape.add(p, b)
            }
            None => Ok(p),
        }
    }

    /// `xproj + h U`.
    fn recur<F: Scalar>(&self, s: &mut Session<'_, F>, xproj: Var, h: Var) -> Result<Var, TensorError> {
        let u = s.var(self.u);
        let hu = s.tape.matmul(h, u)?;
        s.tape.add(xproj, hu)
    }
}

/// Update and reset gate activations of one GRU step.
#[derive(Debug, Clone, Copy)]
pub struct GruGates {
    pub update: Var,
    pub reset: Var,
}

/// Gated recurrent unit:
/// `u = σ(xW_z + hU_z + b_z)`, `r = σ(xW_r + hU_r + b_r)`,
/// `h' = (1 - u) ⊙ h + u ⊙ tanh(xW_h + (h ⊙ r)U_h + b_h)`.
#[derive(Debug, Clone)]
pub struct GruCell {
    z: Gate,
    r: Gate,
    h: Gate,
    pub d_in: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, d_in: usize, hidden: usize, bias: bool, rng: &mut Generator) -> Self {
        let b = bias.then_some(0.0);
        GruCell {
            z: Gate::new(store, &format!("{name}.z"), d_in, hidden, b, rng),
            r: Gate::new(store, &format!("{name}.r"), d_in, hidden, b, rng),
            h: Gate::new(store, &format!("{name}.h"), d_in, hidden, b, rng),
            d_in,
            hidden,
        }
    }

    /// Parameter ids as `(W_z, W_r, W_h, U_z, U_r, U_h)`.
    pub fn weights(&self) -> [ParamId; 6] {
        [self.z.w, self.r.w, self.h.w, self.z.u, self.r.u, self.h.u]
    }

    pub fn biases(&self) -> Option<[ParamId; 3]> {
        Some([self.z.b?, self.r.b?, self.h.b?])
    }

    fn project<F: Scalar>(&self, s: &mut Session<'_, F>, x: Var) -> Result<Vec<Var>, TensorError> {
        Ok(vec![self.z.project(s, x)?, self.r.project(s, x)?, self.h.project(s, x)?])
    }

    fn cell<F: Scalar>(&self, s: &mut Session<'_, F>, xp: &[Var], h: Var) -> Result<(Var, GruGates), TensorError> {
        let u = self.z.recur(s, xp[0], h)?;
        let u = s.tape.sigmoid(u)?;
        let r = self.r.recur(s, xp[1], h)?;
        let r = s.tape.sigmoid(r)?;
        let hr = s.tape.mul(h, r)?;
        let cand = self.h.recur(s, xp[2], hr)?;
        let cand = s.tape.tanh(cand)?;
        let keep = s.tape.one_minus(u)?;
        let old = s.tape.mul(keep, h)?;
        let new = s.tape.mul(u, cand)?;
        Ok((s.tape.add(old, new)?, GruGates { update: u, reset: r }))
    }

    /// One step from `x_t: [b, d_in]` and `h_prev: [b, hidden]`.
    pub fn step<F: Scalar>(&self, s: &mut Session<'_, F>, x: Var, h_prev: Var) -> Result<Var, TensorError> {
        self.step_with_gates(s, x, h_prev).map(|(h, _)| h)
    }

    pub fn step_with_gates<F: Scalar>(&self, s: &mut Session<'_, F>, x: Var, h_prev: Var) -> Result<(Var, GruGates), TensorError> {
        let xp = self.project(s, x)?;
        self.cell(s, &xp, h_prev)
    }
}

/// LSTM with input, forget and output gates; the forget bias starts at 1.
#[derive(Debug, Clone)]
pub struct LstmCell {
    i: Gate,
    f: Gate,
    o: Gate,
    g: Gate,
    pub hidden: usize,
}

impl LstmCell {
    pub const FORGET_BIAS: f64 = 1.0;

    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, d_in: usize, hidden: usize, rng: &mut Generator) -> Self {
        LstmCell {
            i: Gate::new(store, &format!("{name}.i"), d_in, hidden, Some(0.0), rng),
            f: Gate::new(store, &format!("{name}.f"), d_in, hidden, Some(Self::FORGET_BIAS), rng),
            o: Gate::new(store, &format!("{name}.o"), d_in, hidden, Some(0.0), rng),
            g: Gate::new(store, &format!("{name}.g"), d_in, hidden, Some(0.0), rng),
            hidden,
        }
    }

    fn project<F: Scalar>(&self, s: &mut Session<'_, F>, x: Var) -> Result<Vec<Var>, TensorError> {
        Ok(vec![self.i.project(s, x)?, self.f.project(s, x)?, self.o.project(s, x)?, self.g.project(s, x)?])
    }

    fn cell<F: Scalar>(&self, s: &mut Session<'_, F>, xp: &[Var], h: Var, c: Var) -> Result<(Var, Var), TensorError> {
        let i = self.i.recur(s, xp[0], h)?;
        let i = s.tape.sigmoid(i)?;
        let f = self.f.recur(s, xp[1], h)?;
        let f = s.tape.sigmoid(f)?;
        let o = self.o.recur(s, xp[2], h)?;
        let o = s.tape.sigmoid(o)?;
        let g = self.g.recur(s, xp[3], h)?;
        let g = s.tape.tanh(g)?;
        let fc = s.tape.mul(f, c)?;
        let ig = s.tape.mul(i, g)?;
        let c = s.tape.add(fc, ig)?;
        let tc = s.tape.tanh(c)?;
        Ok((s.tape.mul(o, tc)?, c))
    }
}

/// Elman cell `h' = tanh(xW + hU + b)`.
#[derive(Debug, Clone)]
pub struct RnnCell {
    gate: Gate,
    pub hidden: usize,
}

impl RnnCell {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, d_in: usize, hidden: usize, rng: &mut Generator) -> Self {
        RnnCell { gate: Gate::new(store, name, d_in, hidden, Some(0.0), rng), hidden }
    }
}

#[derive(Debug, Clone)]
enum Cell {
    Rnn(RnnCell),
    Lstm(LstmCell),
    Gru(GruCell),
}

impl Cell {
    fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, kind: CellKind, d_in: usize, hidden: usize, gru_bias: bool, rng: &mut Generator) -> Self {
        match kind {
            CellKind::Rnn => Cell::Rnn(RnnCell::new(store, name, d_in, hidden, rng)),
            CellKind::Lstm => Cell::Lstm(LstmCell::new(store, name, d_in, hidden, rng)),
            CellKind::Gru => Cell::Gru(GruCell::new(store, name, d_in, hidden, gru_bias, rng)),
        }
    }

    fn project<F: Scalar>(&self, s: &mut Session<'_, F>, x: Var) -> Result<Vec<Var>, TensorError> {
        match self {
            Cell::Rnn(c) => Ok(vec![c.gate.project(s, x)?]),
            Cell::Lstm(c) => c.project(s, x),
            Cell::Gru(c) => c.project(s, x),
        }
    }

    /// Scans the projected sequence in `order`, returning the state after
    /// each position, indexed by position.
    fn scan<F: Scalar>(&self, s: &mut Session<'_, F>, proj: &[Var], batch: usize, hidden: usize, order: &[usize]) -> Result<Vec<Var>, TensorError> {
        let zeros = s.tape.constant(Tensor::zeros(&[batch, hidden]));
        let (mut h, mut c) = (zeros, zeros);
        let mut states = vec![zeros; order.len()];
        for &t in order {
            let xp: Vec<Var> = proj.iter().map(|&p| s.tape.select_step(p, t)).collect::<Result<_, _>>()?;
            h = match self {
                Cell::Rnn(cell) => {
                    let pre = cell.gate.recur(s, xp[0], h)?;
                    s.tape.tanh(pre)?
                }
                Cell::Lstm(cell) => {
                    let (nh, nc) = cell.cell(s, &xp, h, c)?;
                    c = nc;
                    nh
                }
                Cell::Gru(cell) => cell.cell(s, &xp, h)?.0,
            };
            states[t] = h;
        }
        Ok(states)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RecurrentOutput {
    /// `[b, n, hidden]` state after each position.
    pub states: Var,
    /// `[b, hidden]` summary state.
    pub last: Var,
}

/// Single recurrent layer, optionally bidirectional. A bidirectional layer
/// runs two independent cells of half the width and concatenates them.
#[derive(Debug, Clone)]
pub struct Recurrent {
    pub kind: CellKind,
    pub hidden: usize,
    fwd: Cell,
    bwd: Option<Cell>,
}

impl Recurrent {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        kind: CellKind,
        d_in: usize,
        hidden: usize,
        bidirectional: bool,
        gru_bias: bool,
        rng: &mut Generator,
    ) -> Result<Self, TensorError> {
        if hidden == 0 || (bidirectional && !hidden.is_multiple_of(2)) {
            return Err(TensorError::Invalid {
                op: "recurrent",
                msg: format!("hidden width {hidden} must be positive{}", if bidirectional { " and even" } else { "" }),
            });
        }
        let per_dir = if bidirectional { hidden / 2 } else { hidden };
        let fwd = Cell::new(store, &format!("{name}.fwd"), kind, d_in, per_dir, gru_bias, rng);
        let bwd = bidirectional.then(|| Cell::new(store, &format!("{name}.bwd"), kind, d_in, per_dir, gru_bias, rng));
        Ok(Recurrent { kind, hidden, fwd, bwd })
    }

    pub fn is_bidirectional(&self) -> bool {
        self.bwd.is_some()
    }

    /// Forward-direction GRU cell, if this is a GRU layer.
    pub fn gru_cell(&self) -> Option<&GruCell> {
        match &self.fwd {
            Cell::Gru(c) => Some(c),
            _ => None,
        }
    }

    /// Runs over `x: [b, n, d_in]` from a zero initial state.
    pub fn forward<F: Scalar>(&self, s: &mut Session<'_, F>, x: Var) -> Result<RecurrentOutput, TensorError> {
        let shape = s.tape.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(TensorError::Invalid { op: "recurrent", msg: format!("input must be [b, n, d], got {shape:?}") });
        }
        let (b, n) = (shape[0], shape[1]);
        let per_dir = if self.bwd.is_some() { self.hidden / 2 } else { self.hidden };
        let order: Vec<usize> = (0..n).collect();
        let proj = self.fwd.project(s, x)?;
        let fwd = self.fwd.scan(s, &proj, b, per_dir, &order)?;
        let Some(bwd_cell) = &self.bwd else {
            let states = s.tape.stack_steps(&fwd)?;
            return Ok(RecurrentOutput { states, last: fwd[n - 1] });
        };
        let rev: Vec<usize> = (0..n).rev().collect();
        let proj = bwd_cell.project(s, x)?;
        let bwd = bwd_cell.scan(s, &proj, b, per_dir, &rev)?;
        let fs = s.tape.stack_steps(&fwd)?;
        let bs = s.tape.stack_steps(&bwd)?;
        let states = s.tape.concat_last(&[fs, bs])?;
        let last = s.tape.concat_last(&[fwd[n - 1], bwd[0]])?;
        Ok(RecurrentOutput { states, last })
    }
}
