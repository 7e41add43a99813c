use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{arg_err, Error, Result};
use crate::math::sqrt;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias-corrected moments. Moment buffers are allocated lazily and
/// matched to parameters by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: ADAM_BETA1, beta2: ADAM_BETA2, eps: ADAM_EPS, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update of `params` from their gradient slots.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        self.begin(params.iter().map(|p| (p.name.as_str(), p.grad.as_slice())))?;
        for (i, p) in params.iter_mut().enumerate() {
            let Param { value, grad, .. } = &mut **p;
            self.apply(i, value, grad);
        }
        Ok(())
    }

    /// Update on raw slices; `names` label errors.
    pub fn update(&mut self, values: &mut [&mut [f64]], grads: &[&[f64]], names: &[&str]) -> Result<()> {
        if values.len() != grads.len() || names.len() != grads.len() {
            return Err(Error::Shape(format!("{} values vs {} gradients", values.len(), grads.len())));
        }
        if values.iter().zip(grads).any(|(v, g)| v.len() != g.len()) {
            return Err(Error::Shape("gradient and value lengths differ".into()));
        }
        self.begin(names.iter().copied().zip(grads.iter().copied()))?;
        for (i, (v, g)) in values.iter_mut().zip(grads).enumerate() {
            self.apply(i, v, g);
        }
        Ok(())
    }

    /// Validates gradients, sizes the moment buffers and advances the step.
    fn begin<'a>(&mut self, grads: impl Iterator<Item = (&'a str, &'a [f64])>) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(arg_err(format!("learning rate must be positive, got {}", self.lr)));
        }
        let mut lens = Vec::new();
        for (name, g) in grads {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient for parameter {name}")));
            }
            lens.push(g.len());
        }
        if self.m.len() != lens.len() || self.m.iter().zip(&lens).any(|(m, n)| m.len() != *n) {
            self.m = lens.iter().map(|&n| alloc::vec![0.0; n]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        Ok(())
    }

    fn apply(&mut self, i: usize, values: &mut [f64], grad: &[f64]) {
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        let (m, v) = (&mut self.m[i], &mut self.v[i]);
        for (k, &gk) in grad.iter().enumerate() {
            m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
            v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            values[k] -= self.lr * m_hat / (sqrt(v_hat) + self.eps);
        }
    }
}
