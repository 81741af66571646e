//! Bias-corrected Adam over a [`Params`] arena.

use crate::nn::layers::{Grads, Params};
use crate::nn::NnError;

/// Adam with the standard moment estimates and bias correction.
pub struct Adam {
    lr: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    /// Zeroed moments for every parameter currently in `params`.
    pub fn new(params: &Params, lr: f64) -> Self {
        assert!(lr.is_finite() && lr > 0.0, "learning rate must be positive");
        let m = params.ids().map(|id| vec![0.0; params.data(id).len()]).collect();
        let v = params.ids().map(|id| vec![0.0; params.data(id).len()]).collect();
        Adam { lr, step: 0, m, v }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Number of completed updates.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update across every parameter. If any gradient is non-finite
    /// the step aborts before touching parameters, moments, or the step
    /// counter, so a poisoned batch cannot corrupt the model.
    pub fn step(&mut self, params: &mut Params, grads: &Grads) -> Result<(), NnError> {
        if !grads.all_finite() {
            return Err(NnError::NonFiniteGradient);
        }
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.step as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.step as i32);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let g = grads.get(id);
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let data = params.data_mut(id);
            for i in 0..data.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
            }
        }
        Ok(())
    }
}
