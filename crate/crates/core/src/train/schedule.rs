//! Learning-rate schedule, AdamW and global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Grads, ParamStore};

/// Steps of linear warmup: `⌈warmup_ratio · total⌉`.
pub fn warmup_steps(total_steps: usize, warmup_ratio: f64) -> usize {
    (warmup_ratio * total_steps as f64).ceil() as usize
}

/// Linear ramp from 0 to `peak` over the warmup steps, then cosine decay to 0
/// at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, peak: f64, warmup_ratio: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidConfig("total_steps must be positive".into()));
    }
    if step > total_steps {
        return Err(Error::InvalidConfig(format!("step {step} exceeds total_steps {total_steps}")));
    }
    let warm = warmup_steps(total_steps, warmup_ratio);
    if step < warm {
        return Ok(peak * step as f64 / warm as f64);
    }
    if step == total_steps {
        return Ok(0.0);
    }
    let progress = (step - warm) as f64 / (total_steps - warm) as f64;
    Ok(peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Pre- and post-clip global gradient norms of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipStats {
    pub pre_norm: f64,
    pub post_norm: f64,
    pub clipped: bool,
}

/// Rescales `grads` in place so its global norm is at most `max_norm`.
///
/// The factor is `max_norm / (norm·(1 + 1e-6) + 1e-6)`. The relative margin
/// exceeds the f32 rounding of the rescaled entries, so a clipped norm never
/// lands above `max_norm`.
pub fn clip_grad_norm(grads: &mut Grads, max_norm: f64) -> ClipStats {
    let pre_norm = grads.global_norm();
    if pre_norm > max_norm {
        grads.scale((max_norm / (pre_norm * (1.0 + 1e-6) + 1e-6)) as f32);
        ClipStats { pre_norm, post_norm: grads.global_norm(), clipped: true }
    } else {
        ClipStats { pre_norm, post_norm: pre_norm, clipped: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments with decoupled weight decay.
///
/// Decay skips one-dimensional tensors (biases and norm affines).
#[derive(Clone, Debug)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

impl AdamW {
    pub fn new(params: &ParamStore, cfg: AdamWConfig) -> Self {
        let zeros: Vec<Vec<f32>> = params.entries.iter().map(|p| vec![0.0; p.data.len()]).collect();
        AdamW { cfg, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads, lr: f64, weight_decay: f64) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t);
        let bc2 = 1.0 - b2.powi(self.t);
        let step = (lr / bc1) as f32;
        let inv_bc2 = (1.0 / bc2) as f32;
        let eps = self.cfg.eps as f32;
        let (b1, b2) = (b1 as f32, b2 as f32);
        for (i, p) in params.entries.iter_mut().enumerate() {
            let decay = if p.shape.len() > 1 { (1.0 - lr * weight_decay) as f32 } else { 1.0 };
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads.0[i]);
            for j in 0..p.data.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let denom = (v[j] * inv_bc2).sqrt() + eps;
                p.data[j] = p.data[j] * decay - step * m[j] / denom;
            }
        }
    }
}
