use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::nn::params::{ParamKind, ParamStore};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 coefficient, applied to weights only.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Bias-corrected Adam with per-parameter first and second moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|p| vec![T::zero(); p.value.numel()]).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    /// Rebuild from persisted moments.
    pub fn from_parts(config: AdamConfig, step: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> Self {
        Self { config, step, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    /// One update of every parameter from its gradient (`grads[i]` belongs to
    /// parameter `i`).
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Vec<T>]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return shape_err("adam", format!("{} gradients for {} parameters", grads.len(), store.len()));
        }
        for ((p, g), m) in store.iter().zip(grads).zip(&self.m) {
            if p.value.numel() != g.len() || m.len() != g.len() {
                return shape_err("adam", format!("gradient of {} has the wrong length", p.name));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::lit(1.0 - c.beta1.powi(t));
        let bc2 = T::lit(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (lr, eps, wd) = (T::lit(c.lr), T::lit(c.eps), T::lit(c.weight_decay));
        for (i, p) in store.iter_mut().enumerate() {
            let decay = c.weight_decay > 0.0 && p.kind == ParamKind::Weight;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, theta) in p.value.data_mut().iter_mut().enumerate() {
                let mut gj = grads[i][j];
                if decay {
                    gj += wd * *theta;
                }
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *theta -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
