use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Parameter;

/// Cosine annealing with warm restarts; cycle `i` lasts `t0 * tmult^i` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgdr {
    pub initial_lr: f64,
    pub min_lr: f64,
    pub t0: f64,
    pub tmult: f64,
}

impl Sgdr {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0) || self.min_lr < 0.0 || !(self.t0 > 0.0) || !(self.tmult >= 1.0) {
            return Err(Error::Config(format!("invalid SGDR schedule {self:?}")));
        }
        Ok(())
    }

    /// Start and length of the cycle containing `progress`.
    pub fn cycle(&self, progress: f64) -> (f64, f64) {
        let progress = progress.max(0.0);
        if self.tmult == 1.0 {
            let start = (progress / self.t0).floor() * self.t0;
            return (start, self.t0);
        }
        let (mut start, mut len) = (0.0, self.t0);
        while progress >= start + len {
            start += len;
            len *= self.tmult;
        }
        (start, len)
    }

    /// Learning rate after `progress` (fractional) epochs.
    pub fn lr(&self, progress: f64) -> f64 {
        let (start, len) = self.cycle(progress);
        let t = progress.max(0.0) - start;
        self.min_lr + 0.5 * (self.initial_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * t / len).cos())
    }

    /// Restart epochs up to and including `until`.
    pub fn restarts(&self, until: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let (mut start, mut len) = (0.0, self.t0);
        while start + len <= until {
            start += len;
            len *= self.tmult;
            out.push(start);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update; `step` counts from 1.
pub fn adam_step(params: &mut [Parameter], grads: &[Vec<f64>], lr: f64, step: u64, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
    }
    if step == 0 {
        return Err(Error::InvalidArgument("Adam steps count from 1".into()));
    }
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    for (p, g) in params.iter_mut().zip(grads) {
        if g.len() != p.numel() {
            return Err(Error::Shape(format!("gradient of {} for {} ({} elements)", g.len(), p.name, p.numel())));
        }
        let Parameter { tensor, first_moment, second_moment, .. } = p;
        for (((w, m), v), &gi) in tensor.data_mut().iter_mut().zip(first_moment.iter_mut()).zip(second_moment.iter_mut()).zip(g) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}
