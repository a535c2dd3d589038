use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Mean binary cross-entropy over the batch.
    pub loss: f64,
    /// Gradient of the mean loss with respect to each probability.
    pub grad: Vec<f64>,
}

impl LossOutput {
    /// Gradient as a `batch × 1` column, ready for [`LayerStack::backward`](super::LayerStack::backward).
    pub fn grad_column(&self) -> Matrix {
        Matrix::column(&self.grad)
    }
}

/// Mean binary cross-entropy and its gradient with respect to `probs`.
pub fn bce_loss(probs: &[f64], labels: &[f64]) -> Result<LossOutput> {
    if probs.len() != labels.len() {
        return Err(Error::rejected(format!(
            "{} probabilities but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::rejected("empty batch"));
    }
    if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::rejected(format!("label {bad} is not 0 or 1")));
    }
    let n = probs.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.iter().zip(labels) {
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.push((-(y / p) + (1.0 - y) / (1.0 - p)) / n);
    }
    Ok(LossOutput { loss: loss / n, grad })
}
