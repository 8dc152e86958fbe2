use crate::error::{Error, Result};

use super::{Gradients, Network};

/// Adam with bias correction and a per-epoch exponential learning-rate decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
    pub base_lr: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Adam {
    pub const DEFAULT_LR: f64 = 1e-4;
    pub const DEFAULT_DECAY: f64 = 0.95;

    pub fn new(net: &Network, base_lr: f64, decay: f64) -> Result<Self> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be > 0, got {base_lr}"
            )));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::InvalidArgument(format!("decay must lie in (0, 1], got {decay}")));
        }
        let zeros: Vec<Vec<f64>> = Gradients::zeros_like(net)
            .tensors()
            .into_iter()
            .map(|(_, t)| t.to_vec())
            .collect();
        Ok(Adam {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            base_lr,
            decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.base_lr * self.decay.powi(epoch as i32)
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first, &self.second)
    }

    /// One update. Nothing is modified if any gradient entry is non-finite.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients, epoch: usize) -> Result<()> {
        let tensors = grads.tensors();
        if tensors.len() != self.first.len() || tensors.iter().zip(&self.first).any(|((_, g), m)| g.len() != m.len()) {
            return Err(Error::InvalidArgument(
                "gradient shapes do not match optimizer state".into(),
            ));
        }
        if let Some((name, _)) = tensors.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric(format!("non-finite gradient in {name}")));
        }
        self.step += 1;
        let lr = self.learning_rate(epoch);
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        for (((_, param), (_, g)), (m, v)) in net
            .trainable_mut()
            .into_iter()
            .zip(tensors)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for i in 0..param.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                param[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
