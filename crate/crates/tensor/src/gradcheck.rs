//! Central finite-difference gradient checking in `f64`.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Elements whose analytic and numeric gradients are both below this floor
/// are compared in absolute rather than relative terms.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|a − n| / max(|a|, |n|, REL_FLOOR)` over all checked entries.
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compare the tape gradient of `f` against central differences of step `h`.
///
/// `f` maps leaf vars (one per input tensor) to a scalar loss. When
/// `max_per_input` is set, only that many evenly spaced coordinates of each
/// input are perturbed.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, max_per_input: Option<usize>, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&tape, &vars)?;
    tape.backward(loss)?;
    let analytic = vars.iter().map(|v| tape.grad(*v)).collect::<Result<Vec<_>>>()?;

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars = perturbed
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        f(&tape, &vars)?.item()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let step = match max_per_input {
            Some(m) if m > 0 && n > m => n / m,
            _ => 1,
        };
        for j in (0..n).step_by(step) {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i].data()[j];
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.max_rel_error = report.max_rel_error.max((a - numeric).abs() / denom);
            report.checked += 1;
        }
    }
    Ok(report)
}
