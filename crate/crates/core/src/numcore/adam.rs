use serde::{Deserialize, Serialize};

use super::{Matrix, Parameterized};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment buffers for every parameter of one model, in `tensors()` order.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update from the gradients currently stored in
    /// `params`. Nothing is modified if any gradient entry is non-finite.
    pub fn step<P: Parameterized + ?Sized>(&mut self, params: &mut P) -> Result<()> {
        let mut tensors = params.tensors_mut();
        for t in tensors.iter_mut() {
            let name = t.name.clone();
            if !t.grad().is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient in parameter '{name}'")));
            }
        }
        if self.m.is_empty() {
            for t in tensors.iter() {
                let (r, c) = t.value().shape();
                self.m.push(Matrix::zeros(r, c));
                self.v.push(Matrix::zeros(r, c));
            }
        }
        if self.m.len() != tensors.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} tensors, model has {}",
                self.m.len(),
                tensors.len()
            )));
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);

        for ((t, m), v) in tensors.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if m.shape() != t.value().shape() {
                return Err(Error::dim(
                    "adam_step",
                    format!("{} moments {}", t.name, m.shape_str()),
                    t.value().shape_str(),
                ));
            }
            let grad = t.grad().clone();
            let value = t.value_mut();
            for (((w, &g), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let g = g + weight_decay * *w;
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
