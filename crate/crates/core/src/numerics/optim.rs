//! AdamW with global-norm clipping, linear warmup and cosine decay.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub clip_norm: f64,
    /// Learning-rate multiplier for the anchor parameter group.
    pub anchor_lr_mult: f64,
    /// Learning-rate multiplier for the velocity parameter group.
    pub velocity_lr_mult: f64,
}

impl OptimizerConfig {
    /// The full-scale schedule: 40k steps, 5k warmup, base lr 2.5e-5.
    pub fn full_scale() -> Self {
        Self {
            base_lr: 2.5e-5,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 1e-8,
            warmup_steps: 5_000,
            total_steps: 40_000,
            clip_norm: 1.0,
            anchor_lr_mult: 1.0,
            velocity_lr_mult: 1.0,
        }
    }

    /// Desk-scale schedule used by default: same betas, decay, clipping and
    /// warmup fraction, compressed to 5000 steps.
    pub fn desk_scale() -> Self {
        Self {
            base_lr: 1e-3,
            warmup_steps: 625,
            total_steps: 5_000,
            ..Self::full_scale()
        }
    }

    /// Learning rate applied at 0-indexed `step`.
    ///
    /// Warmup multiplier is `min(1, (step+1)/warmup)`; afterwards the rate
    /// follows a half cosine from `base_lr` to exactly 0 at `total_steps`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps);
        if span == 0 {
            return if step < self.total_steps { self.base_lr } else { 0.0 };
        }
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::desk_scale()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            step: 0,
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub lr: f64,
    pub grad_norm: f64,
    pub clip_scale: f64,
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// Scale factor that brings `norm` down to at most `max_norm`.
pub fn clip_scale(norm: f64, max_norm: f64) -> f64 {
    if norm > max_norm && norm > 0.0 {
        max_norm / norm
    } else {
        1.0
    }
}

/// One AdamW update.
///
/// `lr_mults` holds one learning-rate multiplier per parameter tensor.
pub fn adamw_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    lr_mults: &[f64],
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<StepInfo> {
    if params.len() != grads.len()
        || params.len() != lr_mults.len()
        || params.len() != state.first_moment.len()
    {
        return Err(Error::Shape(format!(
            "optimizer: {} params, {} grads, {} multipliers, {} moments",
            params.len(),
            grads.len(),
            lr_mults.len(),
            state.first_moment.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        p.check_same_shape(g)?;
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
    }

    let grad_norm = global_norm(grads);
    let scale = clip_scale(grad_norm, cfg.clip_norm);
    let lr = cfg.lr_at(state.step);
    let t = (state.step + 1) as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let lr_i = lr * lr_mults[i];
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            let gj = gj * scale;
            *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
            *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
            let mhat = *mj / bc1;
            let vhat = *vj / bc2;
            *pj -= lr_i * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * *pj);
        }
    }
    state.step += 1;
    Ok(StepInfo {
        lr,
        grad_norm,
        clip_scale: scale,
    })
}
