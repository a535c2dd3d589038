//! Gradient reversal and FGSM perturbation of hidden representations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{bce_loss, Adam, Layer, LayerStack, Masks, Matrix, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrlConfig {
    pub lambda: f64,
}

impl Default for GrlConfig {
    fn default() -> Self {
        Self { lambda: 2.0 }
    }
}

impl GrlConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::rejected(format!("lambda {lambda} must be finite and >= 0")));
        }
        Ok(Self { lambda })
    }
}

/// Identity in the forward direction.
pub fn grl_forward(x: &Matrix) -> Matrix {
    x.clone()
}

/// Reverses and scales the upstream gradient: `-lambda * g`.
pub fn grl_backward(upstream: &Matrix, lambda: f64) -> Matrix {
    upstream.map(|g| -lambda * g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FgsmConfig {
    /// Max-norm budget of the perturbation.
    pub epsilon: f64,
    /// Weight of the clean loss; the perturbed loss gets `1 - alpha`.
    pub alpha: f64,
    /// Layer whose output is perturbed. `None` means the encoder boundary.
    pub intercept_layer: Option<usize>,
}

impl Default for FgsmConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            alpha: 0.5,
            intercept_layer: None,
        }
    }
}

impl FgsmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::rejected(format!(
                "epsilon {} must be finite and >= 0",
                self.epsilon
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::rejected(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }

    /// Resolves the intercept layer for `stack`. It must be a hidden layer, i.e. strictly before
    /// the final dense layer.
    pub fn intercept(&self, stack: &LayerStack) -> Result<usize> {
        let boundary = stack.encoder_len();
        let k = self.intercept_layer.unwrap_or(boundary - 1);
        if k >= boundary {
            return Err(Error::rejected(format!(
                "intercept layer {k} is not a hidden layer (encoder has {boundary} layers)"
            )));
        }
        Ok(k)
    }
}

/// `epsilon * sign(grad)` elementwise, with `sign(0) = 0`.
pub fn fgsm_eta(grad_at_h: &Matrix, epsilon: f64) -> Result<Matrix> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::rejected(format!("epsilon {epsilon} must be finite and >= 0")));
    }
    Ok(grad_at_h.map(|g| {
        if g > 0.0 {
            epsilon
        } else if g < 0.0 {
            -epsilon
        } else {
            0.0
        }
    }))
}

/// Losses of one FGSM-regularized step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FgsmStep {
    pub clean_loss: f64,
    pub adversarial_loss: f64,
    /// Largest absolute entry of the injected perturbation.
    pub eta_max_abs: f64,
}

impl FgsmStep {
    /// `alpha * clean + (1 - alpha) * adversarial`.
    pub fn combined(&self, alpha: f64) -> f64 {
        alpha * self.clean_loss + (1.0 - alpha) * self.adversarial_loss
    }
}

/// One optimizer step on `alpha * J(h) + (1 - alpha) * J(h + eta)`.
///
/// The sequence is: clean forward; snapshot the intercepted block; gradient of the cost at `h`
/// against the model's own hard predictions; inject `h' = h + eta`; adversarial loss and its
/// backward pass; restore the snapshot; clean backward; a single optimizer step. Dropout masks
/// come from `dropout_rng` exactly as in a plain step, so `alpha = 1` reproduces a plain step
/// bit for bit, as does `epsilon = 0` with `alpha = 0.5`.
pub fn fgsm_training_step<R: rand::Rng>(
    stack: &mut LayerStack,
    optimizer: &mut Adam,
    x: &Matrix,
    labels: &[f64],
    cfg: &FgsmConfig,
    learning_rate: f64,
    dropout_rng: &mut R,
) -> Result<FgsmStep> {
    cfg.validate()?;
    let k = cfg.intercept(stack)?;
    let n_layers = stack.len();
    let head = k + 1..n_layers;

    let acts = stack.forward(x, Mode::Train, dropout_rng)?;
    let probs = acts.probs();
    let clean = bce_loss(&probs, labels)?;

    let block = stack.block_start(k)..k + 1;
    let saved = stack.snapshot(block.clone());

    // Gradient at h of the cost against predicted labels; no parameter gradients accumulate.
    let y_pred: Vec<f64> = probs.iter().map(|&p| if p >= 0.5 { 1.0 } else { 0.0 }).collect();
    let pred_loss = bce_loss(&probs, &y_pred)?;
    let grad_h = stack.backward_span(&acts, head.clone(), &pred_loss.grad_column(), false)?;
    let eta = fgsm_eta(&grad_h, cfg.epsilon)?;

    let mut h_adv = acts.output_of(k).clone();
    h_adv.add_assign(&eta);
    let adv_acts = stack.forward_span(&h_adv, head.clone(), Mode::Train, Masks::Replay(&acts))?;
    let adv = bce_loss(&adv_acts.probs(), labels)?;
    let mut adv_grad = adv.grad_column();
    adv_grad.scale(1.0 - cfg.alpha);
    let g_h = stack.backward_span(&adv_acts, head, &adv_grad, true)?;
    // h' = h + eta with eta held constant, so dJ/dh = dJ/dh'.
    stack.backward_span(&acts, 0..k + 1, &g_h, true)?;

    stack.restore(block.start, &saved)?;
    if !same_state(&stack.snapshot(block.clone()), &saved) {
        return Err(Error::Integrity(format!(
            "layers {block:?} differ from their snapshot after restore"
        )));
    }

    let mut clean_grad = clean.grad_column();
    clean_grad.scale(cfg.alpha);
    stack.backward(&acts, &clean_grad)?;
    optimizer.step(stack, learning_rate)?;

    Ok(FgsmStep {
        clean_loss: clean.loss,
        adversarial_loss: adv.loss,
        eta_max_abs: eta.max_abs(),
    })
}

/// Parameter values and running statistics agree; gradient buffers are ignored.
fn same_state(a: &[Layer], b: &[Layer]) -> bool {
    let strip = |layers: &[Layer]| {
        let mut out = layers.to_vec();
        out.iter_mut()
            .for_each(|l| l.params_mut().into_iter().for_each(|p| p.zero_grad()));
        out
    };
    strip(a) == strip(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::{self, Stream};
    use crate::nn::MlpOptions;
    use rand::Rng;

    fn toy(seed: u64) -> (LayerStack, Matrix, Vec<f64>) {
        let stack = LayerStack::mlp(4, &[6, 5], MlpOptions::default(), seed).unwrap();
        let mut r = rng::stream(seed, Stream::Custom(9));
        let x = Matrix::from_vec(8, 4, (0..32).map(|_| r.random_range(-1.0..1.0)).collect());
        let y = (0..8).map(|i| f64::from(i % 2 == 0)).collect();
        (stack, x, y)
    }

    fn plain_step(stack: &mut LayerStack, opt: &mut Adam, x: &Matrix, y: &[f64], rng: &mut rng::SeededRng) {
        let acts = stack.forward(x, Mode::Train, rng).unwrap();
        let loss = bce_loss(&acts.probs(), y).unwrap();
        stack.backward(&acts, &loss.grad_column()).unwrap();
        opt.step(stack, 0.01).unwrap();
    }

    #[test]
    fn grl_examples() {
        let x = Matrix::from_rows(&[vec![1.5, -2.0]]);
        assert_eq!(grl_forward(&x), x);
        let g = Matrix::from_rows(&[vec![0.3, -0.1]]);
        assert_eq!(grl_backward(&g, 2.0).as_slice(), &[-0.6, 0.2]);
        assert!(grl_backward(&g, 0.0).as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(grl_backward(&grl_backward(&g, 1.0), 1.0), g);
        assert!(GrlConfig::new(-1.0).is_err());
    }

    #[test]
    fn eta_examples() {
        let g = Matrix::from_rows(&[vec![0.3, -0.2, 0.0]]);
        assert_eq!(fgsm_eta(&g, 0.1).unwrap().as_slice(), &[0.1, -0.1, 0.0]);
        assert!(fgsm_eta(&g, 0.0).unwrap().as_slice().iter().all(|&v| v == 0.0));
        assert!(fgsm_eta(&g, -0.1).is_err());
    }

    #[test]
    fn combined_objective() {
        let s = FgsmStep {
            clean_loss: 0.8,
            adversarial_loss: 1.2,
            eta_max_abs: 0.0,
        };
        assert!((s.combined(0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_epsilon_matches_plain_step() {
        let (mut a, x, y) = toy(3);
        let mut b = a.clone();
        let (mut oa, mut ob) = (Adam::new(&a), Adam::new(&b));
        let (mut ra, mut rb) = (rng::stream(3, Stream::Dropout), rng::stream(3, Stream::Dropout));
        let cfg = FgsmConfig {
            epsilon: 0.0,
            ..Default::default()
        };
        for _ in 0..3 {
            let s = fgsm_training_step(&mut a, &mut oa, &x, &y, &cfg, 0.01, &mut ra).unwrap();
            assert!((s.clean_loss - s.adversarial_loss).abs() < 1e-10);
            plain_step(&mut b, &mut ob, &x, &y, &mut rb);
        }
        assert_eq!(a, b);
    }

    #[test]
    fn alpha_one_matches_plain_step() {
        let (mut a, x, y) = toy(4);
        let mut b = a.clone();
        let (mut oa, mut ob) = (Adam::new(&a), Adam::new(&b));
        let (mut ra, mut rb) = (rng::stream(4, Stream::Dropout), rng::stream(4, Stream::Dropout));
        let cfg = FgsmConfig {
            epsilon: 0.3,
            alpha: 1.0,
            intercept_layer: None,
        };
        for _ in 0..3 {
            fgsm_training_step(&mut a, &mut oa, &x, &y, &cfg, 0.01, &mut ra).unwrap();
            plain_step(&mut b, &mut ob, &x, &y, &mut rb);
        }
        assert_eq!(a, b);
    }

    #[test]
    fn perturbation_respects_budget_and_changes_the_update() {
        let (mut a, x, y) = toy(5);
        let mut b = a.clone();
        let (mut oa, mut ob) = (Adam::new(&a), Adam::new(&b));
        let (mut ra, mut rb) = (rng::stream(5, Stream::Dropout), rng::stream(5, Stream::Dropout));
        let cfg = FgsmConfig {
            epsilon: 0.2,
            ..Default::default()
        };
        let s = fgsm_training_step(&mut a, &mut oa, &x, &y, &cfg, 0.01, &mut ra).unwrap();
        assert!(s.eta_max_abs <= 0.2);
        plain_step(&mut b, &mut ob, &x, &y, &mut rb);
        assert_ne!(a, b);
    }

    #[test]
    fn output_layer_cannot_be_intercepted() {
        let (mut a, x, y) = toy(6);
        let mut opt = Adam::new(&a);
        let cfg = FgsmConfig {
            intercept_layer: Some(a.encoder_len()),
            ..Default::default()
        };
        let mut r = rng::stream(6, Stream::Dropout);
        assert!(fgsm_training_step(&mut a, &mut opt, &x, &y, &cfg, 0.01, &mut r).is_err());
    }

    #[test]
    fn interior_intercept_runs() {
        let (mut a, x, y) = toy(7);
        let mut opt = Adam::new(&a);
        let cfg = FgsmConfig {
            intercept_layer: Some(1),
            ..Default::default()
        };
        let mut r = rng::stream(7, Stream::Dropout);
        let s = fgsm_training_step(&mut a, &mut opt, &x, &y, &cfg, 0.01, &mut r).unwrap();
        assert!(s.adversarial_loss.is_finite());
    }
}
