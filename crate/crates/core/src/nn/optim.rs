use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Adam without weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Closed-form cosine annealing to zero, oscillating with period `2 * t_max`.
pub fn cosine_lr(base: f64, epoch: usize, t_max: usize) -> f64 {
    if t_max == 0 {
        return base;
    }
    base * (1.0 + (PI * epoch as f64 / t_max as f64).cos()) / 2.0
}

/// Linear decay from `start` to `end` over `decay_epochs`, then held.
pub fn linear_decay(start: f64, end: f64, epoch: usize, decay_epochs: usize) -> f64 {
    if decay_epochs == 0 || epoch >= decay_epochs {
        return end;
    }
    start + (end - start) * epoch as f64 / decay_epochs as f64
}
