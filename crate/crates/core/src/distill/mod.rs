//! Temperature softmax, the combined cross-entropy / KL distillation
//! objective, teacher-logit tables and logit-averaging ensembles.

mod table;

use serde::{Deserialize, Serialize};

pub use table::{ensemble_logits, load_teacher_logits, TeacherLogitsTable};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdConfig {
    /// Weight of the label term; `1 - lambda` weights the distillation term.
    pub lambda: f64,
    pub temperature: f64,
}

impl Default for KdConfig {
    fn default() -> Self {
        Self {
            lambda: 0.02,
            temperature: 2.0,
        }
    }
}

impl KdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.temperature <= 0.0 || !self.temperature.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

fn check_logits(z: &[f64]) -> Result<()> {
    if z.is_empty() {
        return Err(Error::InvalidArgument("empty logit vector".into()));
    }
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(())
}

/// `log softmax(z / tau)` with max subtraction.
pub fn log_softmax(z: &[f64], tau: f64) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = z.iter().map(|v| (v - max) / tau).collect();
    let lse = shifted.iter().map(|v| v.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|v| v - lse).collect()
}

/// `exp(z_i / tau) / sum_j exp(z_j / tau)`.
pub fn temperature_softmax(z: &[f64], tau: f64) -> Result<Vec<f64>> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    check_logits(z)?;
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| ((v - max) / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// Loss value with its components and the exact gradient w.r.t. the student
/// logits.
#[derive(Debug, Clone, PartialEq)]
pub struct KdLoss {
    pub total: f64,
    pub cross_entropy: f64,
    pub kl: f64,
    pub grad: Vec<f64>,
}

/// `-sum_i y_i log softmax(z)_i` and its gradient `softmax(z) * sum(y) - y`.
pub fn cross_entropy(z: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_logits(z)?;
    if target.len() != z.len() {
        return Err(Error::Shape(format!(
            "target of {} classes for {} logits",
            target.len(),
            z.len()
        )));
    }
    let logp = log_softmax(z, 1.0);
    let mass: f64 = target.iter().sum();
    let loss = -target.iter().zip(&logp).map(|(y, lp)| y * lp).sum::<f64>();
    let grad = logp.iter().zip(target).map(|(lp, y)| lp.exp() * mass - y).collect();
    Ok((loss, grad))
}

/// `lambda * CE(y, softmax(z_s)) + (1 - lambda) * tau^2 * KL(softmax(z_t/tau) || softmax(z_s/tau))`.
pub fn kd_loss(student: &[f64], teacher: &[f64], target: &[f64], cfg: &KdConfig) -> Result<KdLoss> {
    cfg.validate()?;
    check_logits(teacher)?;
    if teacher.len() != student.len() {
        return Err(Error::Shape(format!(
            "teacher has {} classes, student {}",
            teacher.len(),
            student.len()
        )));
    }
    let (ce, ce_grad) = cross_entropy(student, target)?;
    let tau = cfg.temperature;
    let log_ps = log_softmax(student, tau);
    let log_pt = log_softmax(teacher, tau);
    let mut kl = 0.0;
    for (lt, ls) in log_pt.iter().zip(&log_ps) {
        let pt = lt.exp();
        if pt > 0.0 {
            kl += pt * (lt - ls);
        }
    }
    let kd_weight = (1.0 - cfg.lambda) * tau * tau;
    let grad = ce_grad
        .iter()
        .zip(log_ps.iter().zip(&log_pt))
        .map(|(g, (ls, lt))| cfg.lambda * g + kd_weight * (ls.exp() - lt.exp()) / tau)
        .collect();
    Ok(KdLoss {
        total: cfg.lambda * ce + kd_weight * kl,
        cross_entropy: ce,
        kl,
        grad,
    })
}
