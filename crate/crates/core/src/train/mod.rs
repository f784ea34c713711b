//! NLL training with step-decayed SGD, best-checkpoint selection and
//! evaluation metrics.

mod metrics;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Model;
use crate::nn::{sgd_update, Session};
use crate::tensor::{lit, Generator, Scalar, Tape, TensorError, Var};
use crate::textpipe::EncodedBatch;

pub use metrics::{evaluate, score, Confusion, EvalReport};

/// Generator stream used for the per-epoch shuffle.
const SHUFFLE_STREAM: u64 = 1;
/// Generator stream used for dropout masks.
const DROPOUT_STREAM: u64 = 2;
/// Rows per forward pass when scoring the validation set.
const SCORE_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 128, epochs: 100, lr: 0.002, decay_factor: 0.5, decay_every: 50, seed: 0, shuffle: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.lr.is_nan() || self.lr < 0.0 || self.lr.is_infinite() {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay_factor must be in (0, 1], got {}", self.decay_factor));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return bad("epochs, batch_size and decay_every must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged { epoch: usize, step: usize, detail: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// `lr0 * decay_factor ^ floor(epoch / decay_every)`, epochs counted from 0.
pub fn schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr * cfg.decay_factor.powi((epoch / cfg.decay_every) as i32)
}

/// Epochs at which the scheduled rate changes.
pub fn decay_events(cfg: &TrainConfig) -> Vec<usize> {
    (1..cfg.epochs).filter(|&e| schedule(e, cfg) != schedule(e - 1, cfg)).collect()
}

/// Mean negative log-likelihood of `labels` under `[b, 2]` log-probabilities.
pub fn nll_loss<F: Scalar>(tape: &mut Tape<F>, log_probs: Var, labels: &[usize]) -> Result<Var, TensorError> {
    tape.nll(log_probs, labels)
}

/// `p <- p - lr * g` on a flat buffer.
pub fn sgd_step<F: Scalar>(params: &mut [F], grads: &[F], lr: F) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient length");
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}

/// One SGD update on `batch` in training mode; returns the loss before the
/// update.
pub fn train_step<F: Scalar>(model: &mut Model<F>, batch: &EncodedBatch, lr: f64, dropout: &mut Generator) -> Result<f64, TensorError> {
    model.check_batch(batch)?;
    let grads = {
        let mut s = Session::train(model.params(), dropout);
        let lp = model.forward(&mut s, batch.indices(), batch.len())?;
        let loss = nll_loss(&mut s.tape, lp, &batch.labels)?;
        let value = s.tape.value(loss).item().expect("scalar loss");
        (value, s.backward(loss)?)
    };
    let (loss, grads) = grads;
    if !grads.all_finite() {
        return Err(TensorError::NonFinite { op: "backward" });
    }
    sgd_update(model.params_mut(), &grads, lit(lr));
    Ok(loss.to_f64().unwrap_or(f64::NAN))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub valid_acc: f64,
    pub valid_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_acc: f64,
}

impl FitOutcome {
    /// One JSON object per line.
    pub fn history_jsonl(&self) -> String {
        self.history.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
    }
}

/// Trains `model` and leaves it holding the parameters of the epoch with the
/// best validation accuracy (the earliest such epoch on ties).
pub fn fit<F: Scalar>(model: &mut Model<F>, train: &EncodedBatch, valid: &EncodedBatch, cfg: &TrainConfig) -> Result<FitOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    if valid.is_empty() {
        return Err(TrainError::EmptyDataset("validation"));
    }
    model.check_batch(train)?;
    model.check_batch(valid)?;
    let mut shuffle_rng = Generator::derived(cfg.seed, SHUFFLE_STREAM);
    let mut dropout_rng = Generator::derived(cfg.seed, DROPOUT_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, crate::nn::ParamStore<F>)> = None;
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        let lr = schedule(epoch, cfg);
        if cfg.shuffle {
            shuffle_rng.shuffle(&mut order);
        }
        let mut loss_sum = 0.0;
        for rows in order.chunks(cfg.batch_size) {
            let batch = train.gather(rows);
            let diverged = |detail: String| TrainError::Diverged { epoch, step, detail };
            let loss = train_step(model, &batch, lr, &mut dropout_rng).map_err(|e| match e {
                TensorError::NonFinite { op } => diverged(format!("{op} produced a non-finite value")),
                other => TrainError::Tensor(other),
            })?;
            if !loss.is_finite() {
                return Err(diverged(format!("loss is {loss}")));
            }
            loss_sum += loss * rows.len() as f64;
            step += 1;
        }
        let c = score(model, valid, SCORE_CHUNK)?;
        let record = EpochRecord { epoch, lr, train_loss: loss_sum / train.len() as f64, valid_acc: c.accuracy(), valid_f1: c.f1().0 };
        log::info!(
            "epoch {epoch:>4}  lr {lr:.6}  loss {:.5}  valid acc {:.4}  f1 {:.4}",
            record.train_loss,
            record.valid_acc,
            record.valid_f1
        );
        if best.as_ref().is_none_or(|(_, acc, _)| record.valid_acc > *acc) {
            best = Some((epoch, record.valid_acc, model.params().clone()));
        }
        history.push(record);
    }
    let (best_epoch, best_valid_acc, params) = best.expect("at least one epoch");
    *model.params_mut() = params;
    Ok(FitOutcome { history, best_epoch, best_valid_acc })
}
