use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::tensor::{Scalar, TensorError};
use crate::textpipe::EncodedBatch;

/// Binary confusion counts with class 1 as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn from_predictions(predicted: &[usize], labels: &[usize]) -> Self {
        assert_eq!(predicted.len(), labels.len(), "prediction/label count");
        let mut c = Confusion::default();
        for (&p, &l) in predicted.iter().zip(labels) {
            c.record(p, l);
        }
        c
    }

    pub fn record(&mut self, predicted: usize, label: usize) {
        match (predicted == 1, label == 1) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// `(TP + TN) / N`, 0 for an empty set.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => (self.tp + self.tn) as f64 / n as f64,
        }
    }

    /// `2TP / (2TP + FP + FN)` and whether the denominator was zero (in
    /// which case the score is reported as 0).
    pub fn f1(&self) -> (f64, bool) {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            (0.0, true)
        } else {
            ((2 * self.tp) as f64 / den as f64, false)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: Confusion,
    pub samples: u64,
    pub accuracy: f64,
    pub f1: f64,
    /// F1 had a zero denominator and was reported as 0.
    pub f1_degenerate: bool,
    /// Mean wall time of one single-sample forward pass.
    pub latency_ms: f64,
    pub latency_batch: usize,
}

impl EvalReport {
    pub fn from_confusion(confusion: Confusion, latency_ms: f64) -> Self {
        let (f1, f1_degenerate) = confusion.f1();
        EvalReport { confusion, samples: confusion.total(), accuracy: confusion.accuracy(), f1, f1_degenerate, latency_ms, latency_batch: 1 }
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.confusion;
        writeln!(f, "{:<10} {:>10} {:>10} {:>15}", "Samples", "Accuracy", "F1", "Test Time(ms)")?;
        writeln!(
            f,
            "{:<10} {:>9.2}% {:>9.2}%{} {:>14.4}",
            self.samples,
            self.accuracy * 100.0,
            self.f1 * 100.0,
            if self.f1_degenerate { "*" } else { " " },
            self.latency_ms
        )?;
        write!(f, "TP={} TN={} FP={} FN={}", c.tp, c.tn, c.fp, c.fn_)?;
        if self.f1_degenerate {
            write!(f, "\n* F1 undefined (no positive predictions or labels); reported as 0")?;
        }
        Ok(())
    }
}

/// Batched inference-mode confusion counts.
pub fn score<F: Scalar>(model: &Model<F>, data: &EncodedBatch, chunk: usize) -> Result<Confusion, TensorError> {
    let mut c = Confusion::default();
    let rows: Vec<usize> = (0..data.len()).collect();
    for part in rows.chunks(chunk.max(1)) {
        let batch = data.gather(part);
        for (p, l) in model.predict(&batch)?.into_iter().zip(&batch.labels) {
            c.record(p, *l);
        }
    }
    Ok(c)
}

/// Scores every row with a separate single-sample forward pass, timing each
/// one after an untimed warm-up pass.
pub fn evaluate<F: Scalar>(model: &Model<F>, data: &EncodedBatch) -> Result<EvalReport, TensorError> {
    if data.is_empty() {
        return Err(TensorError::Invalid { op: "evaluate", msg: "empty test set".into() });
    }
    model.check_batch(data)?;
    model.predict(&data.gather(&[0]))?;
    let mut c = Confusion::default();
    let mut elapsed = 0.0;
    for i in 0..data.len() {
        let one = data.gather(&[i]);
        let start = Instant::now();
        let p = model.predict(&one)?;
        elapsed += start.elapsed().as_secs_f64();
        c.record(p[0], one.labels[0]);
    }
    Ok(EvalReport::from_confusion(c, elapsed * 1000.0 / data.len() as f64))
}
