//! Hand-written layers with explicit backward passes: fully connected layers,
//! residual blocks, a bidirectional LSTM, a max-pooled point-set encoder and
//! Adam. Everything runs in `f64`.

mod adam;
mod lstm;
mod pointnet;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::*;
pub use lstm::*;
pub use pointnet::*;

use crate::error::{shape_err, Result};
use crate::math::sqrt;

/// Negative-side slope of the leaky rectifier used everywhere.
pub const LEAKY_SLOPE: f64 = 0.01;

#[inline]
pub fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
pub fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// A named trainable tensor with its gradient slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { name: name.into(), shape: shape.to_vec(), value: vec![0.0; n], grad: vec![0.0; n] }
    }

    /// Uniform in `±1/√fan_in`.
    pub fn uniform(name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(name, shape);
        let bound = 1.0 / sqrt(fan_in.max(1) as f64);
        for v in p.value.iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything that owns trainable parameters.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Bitwise fingerprint of all parameter values (FNV-1a over the bits).
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.params() {
            for v in &p.value {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Copies values from `other` by position; shapes must agree.
    fn load_from(&mut self, values: &[Vec<f64>]) -> Result<()> {
        let mut ps = self.params_mut();
        if ps.len() != values.len() {
            return Err(shape_err(format!("{} tensors supplied for {} parameters", values.len(), ps.len())));
        }
        for (p, v) in ps.iter_mut().zip(values) {
            if p.value.len() != v.len() {
                return Err(shape_err(format!("parameter {} expects {} values, got {}", p.name, p.value.len(), v.len())));
            }
            p.value.copy_from_slice(v);
            p.grad.resize(v.len(), 0.0);
        }
        Ok(())
    }

    fn set_all(&mut self, value: f64) {
        for p in self.params_mut() {
            p.value.iter_mut().for_each(|v| *v = value);
        }
    }
}

/// `y = W x + b`, `W` stored row-major as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: Param::uniform(format!("{name}.w"), &[out_dim, in_dim], in_dim, rng),
            b: Param::uniform(format!("{name}.b"), &[out_dim], in_dim, rng),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(shape_err(format!("{}: input width {} != {}", self.w.name, x.len(), self.in_dim)));
        }
        Ok(self.apply(x))
    }

    /// Unchecked forward for internal callers that already validated widths.
    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.b.value.clone();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.w.value[o * self.in_dim..(o + 1) * self.in_dim];
            *yo += row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim || dy.len() != self.out_dim {
            return Err(shape_err(format!("{}: backward widths {}/{}", self.w.name, x.len(), dy.len())));
        }
        Ok(self.back(x, dy, true))
    }

    /// `Wᵀ dy` without touching the gradient slots.
    pub fn input_grad(&self, dy: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (o, &g) in dy.iter().enumerate() {
            let row = &self.w.value[o * self.in_dim..(o + 1) * self.in_dim];
            for (d, w) in dx.iter_mut().zip(row) {
                *d += g * w;
            }
        }
        dx
    }

    pub(crate) fn back(&mut self, x: &[f64], dy: &[f64], want_dx: bool) -> Vec<f64> {
        let mut dx = if want_dx { vec![0.0; self.in_dim] } else { Vec::new() };
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            self.b.grad[o] += g;
            let base = o * self.in_dim;
            let grow = &mut self.w.grad[base..base + self.in_dim];
            for (gw, xi) in grow.iter_mut().zip(x) {
                *gw += g * xi;
            }
            if want_dx {
                let row = &self.w.value[base..base + self.in_dim];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
        }
        dx
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}

/// `y = x + FC₂(leaky(FC₁(x)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Activations kept for [`ResidualBlock::backward`].
#[derive(Debug, Clone)]
pub struct ResidualCache {
    x: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

impl ResidualBlock {
    pub fn new(name: &str, width: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            fc1: Linear::new(&format!("{name}.fc1"), width, hidden, rng),
            fc2: Linear::new(&format!("{name}.fc2"), hidden, width, rng),
        }
    }

    pub fn width(&self) -> usize {
        self.fc1.in_dim
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ResidualCache)> {
        if x.len() != self.fc1.in_dim || self.fc2.out_dim != self.fc1.in_dim {
            return Err(shape_err(format!("residual block width {} vs input {}", self.fc1.in_dim, x.len())));
        }
        let pre = self.fc1.apply(x);
        let act: Vec<f64> = pre.iter().map(|v| leaky(*v)).collect();
        let mut y = self.fc2.apply(&act);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += xi;
        }
        Ok((y, ResidualCache { x: x.to_vec(), pre, act }))
    }

    /// `dL/dx` only; parameter gradients are left alone.
    pub fn input_grad(&self, cache: &ResidualCache, dy: &[f64]) -> Vec<f64> {
        let d_act = self.fc2.input_grad(dy);
        let d_pre: Vec<f64> = d_act.iter().zip(&cache.pre).map(|(g, p)| g * leaky_grad(*p)).collect();
        let mut dx = self.fc1.input_grad(&d_pre);
        for (d, g) in dx.iter_mut().zip(dy) {
            *d += g;
        }
        dx
    }

    pub fn backward(&mut self, cache: &ResidualCache, dy: &[f64]) -> Vec<f64> {
        let d_act = self.fc2.back(&cache.act, dy, true);
        let d_pre: Vec<f64> = d_act.iter().zip(&cache.pre).map(|(g, p)| g * leaky_grad(*p)).collect();
        let mut dx = self.fc1.back(&cache.x, &d_pre, true);
        for (d, g) in dx.iter_mut().zip(dy) {
            *d += g;
        }
        dx
    }
}

impl Module for ResidualBlock {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.fc1.params();
        v.extend(self.fc2.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.fc1.params_mut();
        v.extend(self.fc2.params_mut());
        v
    }
}

/// Shared helper for gradient checks in tests across the crate.
#[cfg(test)]
pub(crate) mod gradcheck {
    use super::Module;

    /// Relative error between an analytic and a central-difference derivative.
    pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
    }

    /// Checks `d loss / d param` for a sample of entries of every parameter.
    pub fn check_module<M: Module>(
        module: &mut M,
        loss: &mut dyn FnMut(&M) -> f64,
        backward: &mut dyn FnMut(&mut M),
        per_param: usize,
        tol: f64,
    ) {
        module.zero_grad();
        backward(module);
        let grads: alloc::vec::Vec<alloc::vec::Vec<f64>> =
            module.params().iter().map(|p| p.grad.clone()).collect();
        let names: alloc::vec::Vec<alloc::string::String> =
            module.params().iter().map(|p| p.name.clone()).collect();
        for (pi, g) in grads.iter().enumerate() {
            let n = g.len();
            let step = (n / per_param).max(1);
            for k in (0..n).step_by(step) {
                let h = 1e-4;
                let orig = module.params()[pi].value[k];
                module.params_mut()[pi].value[k] = orig + h;
                let fp = loss(module);
                module.params_mut()[pi].value[k] = orig - h;
                let fm = loss(module);
                module.params_mut()[pi].value[k] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let e = rel_err(g[k], fd);
                assert!(e < tol || (g[k] - fd).abs() < 1e-8, "{}[{k}]: analytic {} fd {fd}", names[pi], g[k]);
            }
        }
    }
}
