//! Central finite differences against the tape's reverse sweep.

use dualnet_core::autodiff::{Tape, Var};
use dualnet_core::{Result, Tensor};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

/// |a − n| / max(|a|, |n|, floor). The floor keeps gradients that are zero up
/// to rounding (e.g. a ReLU unit that is off) from producing 0/0 ratios.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

/// Builds `f(inputs)` as a scalar on a fresh tape, differentiates it, and
/// compares every input coordinate against a central difference with `STEP`.
/// Returns the largest relative error.
pub fn max_error<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars).expect("forward");
        tape.value(out).item().expect("scalar output")
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars).expect("forward");
    let grads = tape.backward(out).expect("backward");

    let mut worst = 0.0_f64;
    let mut shifted: Vec<Tensor> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v);
        for j in 0..inputs[k].len() {
            let base = inputs[k].data()[j];
            shifted[k].data_mut()[j] = base + STEP;
            let up = eval(&shifted);
            shifted[k].data_mut()[j] = base - STEP;
            let down = eval(&shifted);
            shifted[k].data_mut()[j] = base;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic.data()[j], numeric));
        }
    }
    worst
}
