//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LR: f64 = 1e-3;

/// A parameter tensor and its gradient, named for diagnostics.
pub struct ParamSlot<'a> {
    pub name: &'a str,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn adam(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// One update of every slot. Nothing is modified if any gradient is
    /// non-finite or any shape disagrees with the accumulators.
    pub fn step(&mut self, slots: &mut [ParamSlot<'_>]) -> Result<()> {
        for s in slots.iter() {
            if s.value.len() != s.grad.len() {
                return Err(Error::Shape(format!(
                    "parameter `{}` has {} values but {} gradients",
                    s.name,
                    s.value.len(),
                    s.grad.len()
                )));
            }
            if s.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(s.name.to_string()));
            }
        }
        if self.first.is_empty() {
            self.first = slots.iter().map(|s| vec![0.0; s.value.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != slots.len()
            || self.first.iter().zip(slots.iter()).any(|(m, s)| m.len() != s.value.len())
        {
            return Err(Error::Shape("optimizer state does not match parameter layout".into()));
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((s, m), v) in slots.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            for i in 0..s.value.len() {
                let g = s.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                s.value[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
