//! Adam updates and the exponential-moving-average teacher.

use alloc::vec;
use alloc::vec::Vec;

use super::ModelParams;
use crate::error::{invalid, Error, Result};
use crate::math;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Upper bound on the learning rate.
pub const DEFAULT_LR_CAP: f64 = 0.001;

#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr_cap: f64,
}

impl OptState {
    pub fn new(n_params: usize) -> Self {
        OptState { m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0, lr_cap: DEFAULT_LR_CAP }
    }
}

/// One bias-corrected Adam step in place.
pub fn adam_step(params: &mut ModelParams, grads: &[f64], opt: &mut OptState, lr: f64) -> Result<()> {
    let n = params.values.len();
    if grads.len() != n || opt.m.len() != n || opt.v.len() != n {
        return Err(invalid("adam: parameter, gradient and moment lengths differ"));
    }
    if lr > opt.lr_cap {
        return Err(invalid(alloc::format!("learning rate {lr} exceeds cap {}", opt.lr_cap)));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Divergence(alloc::format!("non-finite gradient at coordinate {i}")));
    }
    opt.step += 1;
    let bc1 = 1.0 - math::powf(ADAM_BETA1, opt.step as f64);
    let bc2 = 1.0 - math::powf(ADAM_BETA2, opt.step as f64);
    for (((p, &g), m), v) in params.values.iter_mut().zip(grads).zip(opt.m.iter_mut()).zip(opt.v.iter_mut()) {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (math::sqrt(v_hat) + ADAM_EPS);
    }
    Ok(())
}

/// `teacher <- decay * teacher + (1 - decay) * student`, coordinate-wise.
pub fn ema_update(teacher: &mut ModelParams, student: &ModelParams, decay: f64) -> Result<()> {
    if teacher.layout != student.layout || teacher.values.len() != student.values.len() {
        return Err(invalid("ema: teacher and student layouts differ"));
    }
    if !(0.0..1.0).contains(&decay) {
        return Err(invalid("ema decay must lie in [0, 1)"));
    }
    for (t, &s) in teacher.values.iter_mut().zip(&student.values) {
        *t = decay * *t + (1.0 - decay) * s;
    }
    Ok(())
}

/// Mean-teacher warm-up: the decay never exceeds `1 - 1/(step + 1)`, so early
/// teachers are plain running averages of the student.
pub fn warmup_decay(decay: f64, step: u64) -> f64 {
    decay.min(1.0 - 1.0 / (step as f64 + 1.0))
}
