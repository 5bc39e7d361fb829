use serde::{Deserialize, Serialize};

use super::{Parameters, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl Adam {
    pub fn new<P: Parameters + ?Sized>(config: AdamConfig, params: &P) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        Adam {
            config,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Validates gradient shapes and finiteness without updating anything.
    pub fn check<P: Parameters + ?Sized>(&self, params: &P, grads: &[Tensor]) -> Result<()> {
        let names = params.names();
        let tensors = params.tensors();
        if tensors.len() != grads.len() || tensors.len() != self.first_moment.len() {
            return Err(Error::shape("adam parameter count", self.first_moment.len(), grads.len()));
        }
        for ((name, t), g) in names.iter().zip(&tensors).zip(grads) {
            if t.shape() != g.shape() {
                return Err(Error::shape(format!("adam gradient for {name}"), format!("{:?}", t.shape()), format!("{:?}", g.shape())));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    param: name.clone(),
                    step: self.step_count + 1,
                });
            }
        }
        Ok(())
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite.
    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &[Tensor]) -> Result<()> {
        self.check(params, grads)?;
        let tensors = params.tensors_mut();
        self.step_count += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step_count.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - beta2.powi(self.step_count.min(i32::MAX as u64) as i32);
        for (((p, g), m), v) in tensors
            .into_iter()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for (((x, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
