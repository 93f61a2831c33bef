//! NAdam and the accuracy-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NadamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Momentum-schedule decay.
    pub momentum_decay: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        NadamConfig { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8, momentum_decay: 0.004 }
    }
}

impl NadamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.momentum_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Nesterov-accelerated Adam with the `μ_t = β1 (1 − ½ 0.96^{t ψ})` momentum schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Nadam {
    pub cfg: NadamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    mu_product: f64,
    t: u64,
}

impl Nadam {
    pub fn new(cfg: NadamConfig, shapes: &[usize]) -> Self {
        Nadam {
            cfg,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            mu_product: 1.0,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    fn mu(&self, t: u64) -> f64 {
        self.cfg.beta1 * (1.0 - 0.5 * 0.96f64.powf(t as f64 * self.cfg.momentum_decay))
    }

    /// One update of `params` with learning rate `lr`.
    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps);
        let mu = self.mu(self.t);
        let mu_next = self.mu(self.t + 1);
        self.mu_product *= mu;
        let mu_product_next = self.mu_product * mu_next;
        let bc2 = 1.0 - b2.powf(self.t as f64);
        let c_grad = lr * (1.0 - mu) / (1.0 - self.mu_product);
        let c_mom = lr * mu_next / (1.0 - mu_product_next);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let denom = (v[i] / bc2).sqrt() + eps;
                p[i] -= c_grad * g[i] / denom + c_mom * m[i] / denom;
            }
        }
    }
}

/// Multiplies the learning rate by `factor` once the monitored accuracy has not
/// improved by more than `threshold` for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
    best: f64,
    wait: usize,
}

impl Plateau {
    pub fn new(factor: f64, patience: usize, threshold: f64) -> Self {
        Plateau { factor, patience, threshold, min_lr: 0.0, best: f64::NEG_INFINITY, wait: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.factor > 0.0 && self.factor < 1.0 && self.patience > 0 && self.threshold >= 0.0 {
            Ok(())
        } else {
            Err(Error::config(format!(
                "plateau needs factor in (0, 1), patience > 0, threshold >= 0; got {}, {}, {}",
                self.factor, self.patience, self.threshold
            )))
        }
    }

    /// Feeds one epoch's accuracy and returns the learning rate for the next epoch.
    pub fn step(&mut self, accuracy: f64, lr: f64) -> f64 {
        if accuracy > self.best + self.threshold {
            self.best = accuracy;
            self.wait = 0;
            return lr;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            self.wait = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut opt = Nadam::new(NadamConfig::default(), &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        for _ in 0..5 {
            opt.step(&mut [&mut p], &[vec![0.0; 3]], 0.01);
        }
        assert_eq!(p, before);
        assert_eq!(opt.steps(), 5);
    }

    #[test]
    fn first_step_moves_against_gradient() {
        let mut opt = Nadam::new(NadamConfig::default(), &[1]);
        let mut p = vec![1.0];
        opt.step(&mut [&mut p], &[vec![2.0]], 0.01);
        assert!(p[0] < 1.0 && p[0] > 0.97);
    }

    #[test]
    fn plateau_fires_after_patience() {
        let mut s = Plateau::new(0.2, 5, 1e-4);
        let mut lr = 0.01;
        lr = s.step(0.5, lr);
        for _ in 0..4 {
            lr = s.step(0.5, lr);
            assert_eq!(lr, 0.01);
        }
        lr = s.step(0.50005, lr);
        assert!((lr - 0.002).abs() < 1e-15);
        lr = s.step(0.6, lr);
        assert!((lr - 0.002).abs() < 1e-15);
    }
}
