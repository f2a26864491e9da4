//! LARS: SGD with momentum and a layer-wise trust ratio.
//!
//! Weight decay and trust-ratio scaling apply to weight matrices and
//! convolution kernels only; biases and normalization parameters (every
//! 1-D tensor) receive plain momentum SGD, at `excluded_lr_scale` times the
//! learning rate.

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LarsConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub trust_coefficient: f64,
    /// Learning-rate multiplier for biases and normalization parameters.
    pub excluded_lr_scale: f64,
}

impl Default for LarsConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-6,
            trust_coefficient: 0.001,
            excluded_lr_scale: 1.0,
        }
    }
}

pub struct Lars {
    cfg: LarsConfig,
    vars: Vec<Var>,
    velocity: Vec<Option<Tensor>>,
}

fn l2_norm(t: &Tensor) -> Result<f64> {
    Ok(f64::from(t.sqr()?.sum_all()?.to_scalar::<f32>()?).sqrt())
}

impl Lars {
    pub fn new(vars: Vec<Var>, cfg: LarsConfig) -> Self {
        let velocity = vec![None; vars.len()];
        Self { cfg, vars, velocity }
    }

    /// One update at learning rate `lr`; variables without a gradient are
    /// left untouched.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        for (var, vel) in self.vars.iter().zip(self.velocity.iter_mut()) {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let w = var.as_tensor();
            let adapted = w.rank() > 1;
            let g = if adapted && self.cfg.weight_decay != 0.0 {
                (g + (w * self.cfg.weight_decay)?)?
            } else {
                g.clone()
            };
            let trust = if adapted {
                let (wn, gn) = (l2_norm(w)?, l2_norm(&g)?);
                if wn > 0.0 && gn > 0.0 {
                    self.cfg.trust_coefficient * wn / gn
                } else {
                    1.0
                }
            } else {
                1.0
            };
            let scaled = (g * trust)?;
            let v = match vel.take() {
                Some(v) => ((v * self.cfg.momentum)? + scaled)?,
                None => scaled,
            };
            let v = v.detach();
            let step_lr = if adapted { lr } else { lr * self.cfg.excluded_lr_scale };
            var.set(&(w - (&v * step_lr)?)?)?;
            *vel = Some(v);
        }
        Ok(())
    }
}
