//! AdamW with decoupled weight decay and the cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::real::Real;
use crate::tensor::Param;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// Optimizer step counter plus hyperparameters. Moments live in each [`Param`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW { config, step: 0 }
    }

    /// One update of every parameter from its populated `grad`.
    pub fn step<T: Real>(&mut self, params: &mut [&mut Param<T>], lr: f64) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let decay = T::lit(1.0 - lr * c.weight_decay);
        let step_size = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(c.eps);
        for p in params.iter_mut() {
            let Param {
                value,
                grad,
                state_m,
                state_v,
            } = &mut **p;
            for (((w, &g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(state_m.data_mut())
                .zip(state_v.data_mut())
            {
                *w = *w * decay;
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *w = *w - step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
    }
}

/// Cosine annealing from `lr_max` at epoch 0 to `lr_min` at `total_epochs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            lr_max: 1e-3,
            lr_min: 1e-6,
            total_epochs: 100,
        }
    }
}

pub fn cosine_lr(epoch: usize, sched: &LrSchedule) -> Result<f64> {
    if sched.total_epochs == 0 {
        return Err(config_err!(
            "learning-rate schedule needs at least one epoch"
        ));
    }
    if epoch > sched.total_epochs {
        return Err(config_err!(
            "epoch {epoch} outside schedule of {} epochs",
            sched.total_epochs
        ));
    }
    let progress = epoch as f64 / sched.total_epochs as f64;
    Ok(sched.lr_min
        + 0.5 * (sched.lr_max - sched.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos()))
}
