//! Adam with L2 weight decay and global gradient-norm clipping.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers shaped like the parameter groups they update.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// Euclidean norm over every gradient group.
pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = shapes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self { config, step: 0, m, v }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update. Gradients are rescaled so their global norm is at most
    /// `clip_norm`, then weight decay is added and bias-corrected moments
    /// drive the step. Returns the pre-clipping gradient norm.
    pub fn step(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>], clip_norm: f64) -> Result<f64> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam: {} parameter groups, {} gradient groups, {} moment groups",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(Error::Shape(format!("adam: group {i} has mismatched lengths")));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(format!("group {i}")));
            }
        }
        if !(clip_norm > 0.0) {
            return Err(Error::InvalidParameter(format!("clip norm must be positive, got {clip_norm}")));
        }
        let norm = global_norm(grads);
        let clip = if norm > clip_norm { clip_norm / norm } else { 1.0 };

        self.step += 1;
        let AdamConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                let gi = g[i] * clip + weight_decay * p[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_decay(lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            weight_decay: 0.0,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_params_without_decay() {
        let mut p = vec![vec![1.0, -2.0]];
        let mut s = AdamState::new(no_decay(1e-3), [2]);
        s.step(&mut p, &[vec![0.0, 0.0]], 1.0).unwrap();
        assert_eq!(p, vec![vec![1.0, -2.0]]);
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut p = vec![vec![1.0]];
        let mut s = AdamState::new(AdamConfig::default(), [1]);
        s.step(&mut p, &[vec![0.0]], 1.0).unwrap();
        // first step with gradient wd * p moves by ~lr toward zero
        assert!(p[0][0] < 1.0 && p[0][0] > 1.0 - 6e-4);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![vec![0.5]];
        let mut s = AdamState::new(no_decay(1e-3), [1]);
        s.step(&mut p, &[vec![1.0]], 1.0).unwrap();
        assert!((p[0][0] - (0.5 - 1e-3)).abs() < 1e-8);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn clipping_rescales_global_norm() {
        // with beta1 = beta2 = 0 the step is lr * g / |g|, so compare moment
        // buffers instead: clipped gradient must be g / 10
        let mut p = vec![vec![0.0, 0.0]];
        let mut s = AdamState::new(no_decay(1e-3), [2]);
        let norm = s.step(&mut p, &[vec![6.0, 8.0]], 1.0).unwrap();
        assert!((norm - 10.0).abs() < 1e-12);
        let m = &s.m[0];
        assert!((m[0] - 0.1 * 0.6).abs() < 1e-12);
        assert!((m[1] - 0.1 * 0.8).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut p = vec![vec![0.0]];
        let mut s = AdamState::new(no_decay(1e-3), [1]);
        assert!(matches!(s.step(&mut p, &[vec![f64::NAN]], 1.0), Err(Error::NonFiniteGradient(_))));
        assert_eq!(s.step, 0);
    }
}
