//! Central finite-difference gradient checking.
//!
//! The numeric side only evaluates forward passes on fresh tapes with the
//! inputs registered as constants, so it never touches the backward code it
//! is checking.

use super::{Tape, Tensor, TensorError, Var};

/// Default finite-difference step.
pub const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
    pub max_rel_error: f64,
    /// (input index, element index) where the maximum occurred.
    pub worst: (usize, usize),
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub elements_checked: usize,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compares the tape gradient of `forward` against central differences for
/// every element of every input.
///
/// `forward` receives a tape and one var per input and must return a scalar.
pub fn check_gradients<Fw>(inputs: &[Tensor<f64>], step: f64, forward: Fw) -> Result<GradCheckReport, TensorError>
where
    Fw: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = forward(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
        let out = forward(&mut t, &vs)?;
        t.value(out).item().ok_or_else(|| TensorError::NonScalarLoss(t.shape(out).to_vec()))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        elements_checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + step;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[i][j];
            let err = relative_error(a, numeric);
            if err > report.max_rel_error || report.elements_checked == 0 {
                report.max_rel_error = err;
                report.worst = (i, j);
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
            report.elements_checked += 1;
        }
    }
    Ok(report)
}
