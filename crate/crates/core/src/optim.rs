//! SGD with momentum and coupled L2 weight decay, and the step schedule.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{Gradients, MlpParams};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    velocity: Gradients,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimState {
    pub fn new(params: &MlpParams, learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate {learning_rate} must be positive")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum {momentum} must lie in [0, 1)")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::config(format!("weight decay {weight_decay} must be non-negative")));
        }
        Ok(OptimState {
            velocity: Gradients::zeros_like(params),
            learning_rate,
            momentum,
            weight_decay,
        })
    }

    pub fn velocity(&self) -> &Gradients {
        &self.velocity
    }
}

/// One update:
///
/// ```text
/// v     <- momentum * v + grad + weight_decay * param
/// param <- param - lr * v
/// ```
pub fn sgd_step(params: &mut MlpParams, grads: &Gradients, state: &mut OptimState) -> Result<()> {
    if !grads.same_shape(params) || !state.velocity.same_shape(params) {
        return Err(Error::input("gradient or velocity shape differs from parameters"));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    let (lr, mu, wd) = (state.learning_rate, state.momentum, state.weight_decay);
    for ((p, &g), v) in params
        .values_mut()
        .zip(grads.values())
        .zip(state.velocity.values_mut())
    {
        *v = mu * *v + g + wd * *p;
        *p -= lr * *v;
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("parameter after update".into()));
    }
    Ok(())
}

/// Step decay: the rate is multiplied by `decay_factor` at every milestone.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    initial_lr: f64,
    milestones: Vec<usize>,
    decay_factor: f64,
}

impl LrSchedule {
    pub fn new(initial_lr: f64, milestones: Vec<usize>, decay_factor: f64) -> Result<Self> {
        if !(initial_lr > 0.0 && initial_lr.is_finite()) {
            return Err(Error::config(format!("initial learning rate {initial_lr} must be positive")));
        }
        if milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("milestones must be strictly increasing"));
        }
        if !(decay_factor > 0.0 && decay_factor.is_finite()) {
            return Err(Error::config(format!("decay factor {decay_factor} must be positive")));
        }
        Ok(LrSchedule { initial_lr, milestones, decay_factor })
    }

    pub fn initial_lr(&self) -> f64 {
        self.initial_lr
    }

    pub fn milestones(&self) -> &[usize] {
        &self.milestones
    }

    pub fn decay_factor(&self) -> f64 {
        self.decay_factor
    }

    /// `initial_lr * decay_factor^(milestones <= epoch)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.initial_lr * libm::pow(self.decay_factor, passed as f64)
    }
}
