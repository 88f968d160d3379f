//! AdamW with decoupled weight decay, plus global-norm gradient clipping.
//!
//! ```text
//! p ← p − lr·λ·p
//! m ← β₁ m + (1 − β₁) g
//! v ← β₂ v + (1 − β₂) g²
//! p ← p − lr · (m / (1 − β₁ᵗ)) / (√(v / (1 − β₂ᵗ)) + ε)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f32,
    #[serde(default = "default_beta1")]
    pub beta1: f32,
    #[serde(default = "default_beta2")]
    pub beta2: f32,
    #[serde(default = "default_eps")]
    pub eps: f32,
    #[serde(default)]
    pub weight_decay: f32,
}

fn default_beta1() -> f32 {
    0.9
}
fn default_beta2() -> f32 {
    0.999
}
fn default_eps() -> f32 {
    1e-8
}

impl AdamWConfig {
    pub fn with_lr(lr: f32) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: 0.0,
        }
    }
}

/// Optimizer state for one parameter group.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, shapes: &[&[usize]]) -> Self {
        let sizes = shapes.iter().map(|s| s.iter().product::<usize>());
        let m: Vec<Vec<f32>> = sizes.map(|n| vec![0.0; n]).collect();
        Self {
            config,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `params[i]` is paired with `grads[i]`; a `None`
    /// gradient is a contract error naming that parameter.
    pub fn step(&mut self, params: &mut [(&str, &mut Tensor)], grads: &[Option<&Tensor>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, ((name, p), g)) in params.iter().zip(grads).enumerate() {
            let g = g.ok_or_else(|| Error::Contract(format!("missing gradient for `{name}`")))?;
            if g.shape() != p.shape() || p.len() != self.m[i].len() {
                return Err(Error::Shape {
                    op: "adamw_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }

        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - (c.beta1 as f64).powi(t);
        let bc2 = 1.0 - (c.beta2 as f64).powi(t);
        let step_size = (c.lr as f64 / bc1) as f32;
        let inv_sqrt_bc2 = (1.0 / bc2.sqrt()) as f32;
        let decay = 1.0 - c.lr * c.weight_decay;

        for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
            let g = g.expect("checked above").data();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, pv) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j];
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let denom = v[j].sqrt() * inv_sqrt_bc2 + c.eps;
                *pv = *pv * decay - step_size * m[j] / denom;
            }
        }
        Ok(())
    }
}

/// Result of [`clip_grad_norm`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipOutcome {
    /// Global L2 norm before clipping.
    pub norm: f32,
    /// Factor the gradients were multiplied by (1 when unchanged).
    pub scale: f32,
    /// Set when the norm is not finite; gradients are left untouched and the
    /// caller should skip the step.
    pub non_finite: bool,
}

pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f32) -> Result<ClipOutcome> {
    if !(max_norm > 0.0) {
        return Err(Error::Contract(format!("max_norm must be > 0, got {max_norm}")));
    }
    let norm = grads.iter().map(|g| g.sq_norm() as f64).sum::<f64>().sqrt() as f32;
    if !norm.is_finite() {
        return Ok(ClipOutcome {
            norm,
            scale: 1.0,
            non_finite: true,
        });
    }
    let mut scale = 1.0;
    if norm > max_norm {
        scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(ClipOutcome {
        norm,
        scale,
        non_finite: false,
    })
}
