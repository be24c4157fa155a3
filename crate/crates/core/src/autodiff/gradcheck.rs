//! Central finite-difference checking of tape gradients.
//!
//! The numerical side only evaluates the forward pass, so it stays
//! independent of every backward rule it audits.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Default central-difference step.
pub const STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Relative error of every element, per input.
    pub errors: Vec<Vec<f64>>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// Compare the analytic gradient of the scalar `objective` with respect to
/// every element of every input against central differences.
pub fn check<F>(inputs: &[Tensor<f64>], step: f64, objective: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone(), false)).collect();
        let out = objective(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone(), true)).collect();
    let out = objective(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0, errors: Vec::new() };
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, inputs[i].numel());
        let mut errors = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + step;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - step;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(analytic[j], numeric);
            report.checked += 1;
            errors.push(err);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((i, j));
            }
        }
        report.errors.push(errors);
    }
    Ok(report)
}
