//! Bias-corrected Adam.

use indexmap::IndexMap;

use super::params::{ModelParams, ParamError};
use crate::tensor::Real;

#[derive(Clone, Debug)]
pub struct AdamState<T: Real = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of completed steps.
    pub t: u64,
    pub m: IndexMap<String, Vec<T>>,
    pub v: IndexMap<String, Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    /// Applies one update to every trainable parameter, then zeroes gradients.
    pub fn step(&mut self, params: &ModelParams<T>) -> Result<(), ParamError> {
        // Validate first so a failure leaves parameters untouched.
        for (name, p) in params.iter() {
            if p.trainable && p.tensor.grad().is_none() {
                return Err(ParamError::NoGrad(name.to_string()));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let bc1 = T::lit(1.0 - self.beta1.powi(t));
        let bc2 = T::lit(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        let one = T::one();
        for (name, p) in params.iter().filter(|(_, p)| p.trainable) {
            let n = p.tensor.numel();
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![T::zero(); n]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| vec![T::zero(); n]);
            let mut grad = p.tensor.grad_mut();
            let g = grad.as_mut().expect("checked above");
            let mut data = p.tensor.data_mut();
            for i in 0..n {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= lr * mhat / (vhat.sqrt() + eps);
                g[i] = T::zero();
            }
        }
        Ok(())
    }
}
