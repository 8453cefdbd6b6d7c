//! Adaptive-moment optimizer with decoupled weight decay, plus global-norm
//! gradient clipping. Hand-rolled so training stays dependency-free and
//! byte-deterministic across platforms.

use serde::{Deserialize, Serialize};

/// Optimizer hyperparameters. Defaults follow common transformer fine-tuning
/// practice: β₁=0.9, β₂=0.999, ε=1e-8, decoupled weight decay 0.01.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn new(learning_rate: f64) -> AdamWConfig {
        AdamWConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> AdamWConfig {
        self.weight_decay = weight_decay;
        self
    }
}

/// AdamW state over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl AdamW {
    pub fn new(param_len: usize, config: AdamWConfig) -> AdamW {
        AdamW {
            config,
            first_moment: vec![0.0; param_len],
            second_moment: vec![0.0; param_len],
            step_count: 0,
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    /// One update: moment tracking with bias correction, then
    /// `p ← p − lr·(m̂/(√v̂+ε) + wd·p)` (decay decoupled from the gradient).
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.first_moment.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        self.step_count += 1;
        let c = &self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step_count as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step_count as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = c.beta1 * self.first_moment[i] + (1.0 - c.beta1) * g;
            self.second_moment[i] = c.beta2 * self.second_moment[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.first_moment[i] / bias1;
            let v_hat = self.second_moment[i] / bias2;
            params[i] -=
                c.learning_rate * (m_hat / (v_hat.sqrt() + c.epsilon) + c.weight_decay * params[i]);
        }
    }
}

/// Scale `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}
