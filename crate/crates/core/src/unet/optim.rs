//! Adam optimizer.

use serde::{Deserialize, Serialize};

use super::params::NetworkParameters;
use super::tensor::Scalar;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    settings: AdamParams,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(settings: AdamParams, params: &NetworkParameters<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![T::zero(); t.values.len()]).collect();
        Self { settings, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One bias-corrected update of every tensor that has a gradient.
    pub fn update(&mut self, params: &mut NetworkParameters<T>, grads: &[Option<Vec<T>>]) {
        self.step += 1;
        let s = self.settings;
        let (b1, b2) = (T::of(s.beta1), T::of(s.beta2));
        let (c1, c2) = (1.0 - s.beta1.powi(self.step), 1.0 - s.beta2.powi(self.step));
        let step_size = T::of(s.lr / c1);
        let inv_c2 = T::of(1.0 / c2);
        let eps = T::of(s.epsilon);
        for (((t, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = g else { continue };
            for (((w, &g), m), v) in t.values.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *w = *w - step_size * *m / ((*v * inv_c2).sqrt() + eps);
            }
        }
    }
}
