//! Central finite-difference gradient checking in 64-bit precision.
//!
//! The numeric side only ever evaluates the forward pass, so it stays an
//! independent oracle for the hand-written backward rules.

use super::{Graph, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error over all checked entries.
    pub max_rel_error: f64,
    /// `(input, element)` where the maximum was attained.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Relative error with a small absolute floor so exact zeros compare sanely.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compares backward gradients of the scalar `f(inputs)` against central
/// differences with step `h` for every element of every input.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let g = Graph::<f64>::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = f(&g, &vars)?;
    let grads = g.backward(loss)?;

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::<f64>::new();
        let vars: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&g, &vars)?.value().item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape().to_vec()));
        for e in 0..inputs[i].numel() {
            let orig = work[i].data()[e];
            work[i].data_mut()[e] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = rel_error(analytic.data()[e], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (i, e);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
