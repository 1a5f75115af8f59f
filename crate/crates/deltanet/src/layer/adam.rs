//! Adam optimizer with bias correction, plus global-norm gradient clipping.

use crate::layer::model::{GradMap, Model};
use crate::linalg::Matrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: usize,
    m: GradMap,
    v: GradMap,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            m: GradMap::new(),
            v: GradMap::new(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One update over every named parameter. Parameters with no entry in
    /// `grads` are left untouched.
    pub fn apply(&mut self, model: &mut Model, grads: &GradMap) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        for (name, param) in model.named_params_mut() {
            let Some(g) = grads.get(&name) else { continue };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            let v = self
                .v
                .entry(name)
                .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            let p = param.data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                let mi = self.cfg.beta1 * m.data()[i] + (1.0 - self.cfg.beta1) * gi;
                let vi = self.cfg.beta2 * v.data()[i] + (1.0 - self.cfg.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                p[i] -= self.cfg.lr * (mi / bc1) / ((vi / bc2).sqrt() + self.cfg.eps);
            }
        }
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut GradMap, max_norm: f64) -> f64 {
    let total: f64 = grads
        .values()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = total.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            g.scale_assign(scale);
        }
    }
    norm
}
