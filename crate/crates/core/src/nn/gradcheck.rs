//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls the forward pass, so it shares no code with
//! [`LayerStack::backward`]. Dropout masks of the reference pass are replayed, which makes the
//! perturbed losses a deterministic function of the parameters.

use super::loss::bce_loss;
use super::matrix::Matrix;
use super::rng::{self, Stream};
use super::stack::{Activations, LayerStack, Masks, Mode};
use crate::error::Result;

/// Outcome of comparing analytic and numeric gradients coordinate by coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub passed: usize,
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn pass_fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, tol: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err <= tol {
            self.passed += 1;
        }
        self.max_rel_error = self.max_rel_error.max(err);
    }
}

/// `|a - b| / max(|a|, |b|)` with an absolute floor of 1e-6 on the denominator, so coordinates
/// whose true gradient is zero are judged by absolute error.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn frozen_loss(stack: &LayerStack, x: &Matrix, labels: &[f64], reference: &Activations) -> Result<f64> {
    let acts = stack.forward_span(x, 0..stack.len(), Mode::Train, Masks::Replay(reference))?;
    Ok(bce_loss(&acts.probs(), labels)?.loss)
}

/// Checks every parameter gradient of the mean BCE loss, plus the input gradient.
pub fn check_gradients(stack: &LayerStack, x: &Matrix, labels: &[f64], step: f64, tol: f64) -> Result<GradCheck> {
    let mut analytic = stack.clone();
    analytic.zero_grad();
    let mut mask_rng = rng::stream(analytic.seed(), Stream::Dropout);
    let reference = analytic.forward_span(x, 0..analytic.len(), Mode::Train, Masks::Draw(&mut mask_rng))?;
    let loss = bce_loss(&reference.probs(), labels)?;
    let input_grad = analytic.backward(&reference, &loss.grad_column())?;

    let mut report = GradCheck {
        checked: 0,
        passed: 0,
        max_rel_error: 0.0,
    };
    let grads: Vec<Vec<f64>> = analytic.params().map(|p| p.grad().to_vec()).collect();
    let mut probe = stack.clone();
    for (pi, grad) in grads.iter().enumerate() {
        for (ci, &g) in grad.iter().enumerate() {
            let original = probe.params().nth(pi).map(|p| p.values()[ci]).unwrap_or_default();
            set_param(&mut probe, pi, ci, original + step);
            let plus = frozen_loss(&probe, x, labels, &reference)?;
            set_param(&mut probe, pi, ci, original - step);
            let minus = frozen_loss(&probe, x, labels, &reference)?;
            set_param(&mut probe, pi, ci, original);
            report.record(g, (plus - minus) / (2.0 * step), tol);
        }
    }

    let mut xp = x.clone();
    for i in 0..x.as_slice().len() {
        let original = x.as_slice()[i];
        xp.as_mut_slice()[i] = original + step;
        let plus = frozen_loss(stack, &xp, labels, &reference)?;
        xp.as_mut_slice()[i] = original - step;
        let minus = frozen_loss(stack, &xp, labels, &reference)?;
        xp.as_mut_slice()[i] = original;
        report.record(input_grad.as_slice()[i], (plus - minus) / (2.0 * step), tol);
    }
    Ok(report)
}

fn set_param(stack: &mut LayerStack, param: usize, coord: usize, value: f64) {
    if let Some(p) = stack.params_mut().nth(param) {
        p.values_mut()[coord] = value;
    }
}
