use super::stack::LayerStack;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers follow the stack's parameter order.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(stack: &LayerStack) -> Self {
        Self::with_config(stack, AdamConfig::default())
    }

    pub fn with_config(stack: &LayerStack, cfg: AdamConfig) -> Self {
        let moments = stack
            .params()
            .map(|p| (vec![0.0; p.len()], vec![0.0; p.len()]))
            .collect();
        Self { cfg, step: 0, moments }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients and zeroes them.
    pub fn step(&mut self, stack: &mut LayerStack, learning_rate: f64) -> Result<()> {
        if !stack.grads_pending() {
            return Err(Error::protocol("optimizer step without a preceding backward pass"));
        }
        if !learning_rate.is_finite() || learning_rate <= 0.0 {
            return Err(Error::rejected(format!(
                "learning rate {learning_rate} must be positive"
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (param, (m, v)) in stack.params_mut().zip(self.moments.iter_mut()) {
            if param.len() != m.len() {
                return Err(Error::Integrity(format!(
                    "optimizer state for {} has the wrong length",
                    param.name()
                )));
            }
            let (values, grad) = param.split_mut();
            for i in 0..values.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
                grad[i] = 0.0;
            }
        }
        stack.clear_pending();
        Ok(())
    }
}
