//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Leaves
//! created with [`Tape::param`] receive gradients from [`Tape::backward`];
//! leaves created with [`Tape::constant`] do not. The tape is generic over
//! [`Scalar`] so the same model code runs in `f32` for training and in `f64`
//! when gradients are checked against finite differences.

mod kernels;
mod tape;
mod tensor;

pub use kernels::{matmul, matmul_at, matmul_bt, sigmoid};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};

use crate::error::Result;

/// Result of comparing analytic gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub checked: usize,
}

/// Relative error with a floor on the denominator, so that entries whose true
/// derivative is ~0 are judged on an absolute scale of `floor`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares [`Tape::backward`] against central finite differences of the
/// scalar function built by `f` over `inputs`.
///
/// `f` receives a fresh tape and one parameter leaf per input and must return
/// a scalar. `stride` > 1 probes every `stride`-th coordinate of each input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], step: f64, stride: usize, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_index: 0,
        checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]);
        for idx in (0..input.numel()).step_by(stride.max(1)) {
            let orig = input.data()[idx];
            work[k].data_mut()[idx] = orig + step;
            let plus = eval(&work)?;
            work[k].data_mut()[idx] = orig - step;
            let minus = eval(&work)?;
            work[k].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.map_or(0.0, |g| g.data()[idx]);
            let err = relative_error(a, numeric, 1e-3);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_input = k;
                report.worst_index = idx;
            }
        }
    }
    Ok(report)
}
