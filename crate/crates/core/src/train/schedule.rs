use std::f64::consts::PI;

use crate::{Error, Result};

/// Learning rate at `step`: a linear ramp from 0 to `base_lr` over
/// `warmup_steps`, then cosine decay reaching 0 at the final step.
pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, base_lr: f64) -> Result<f64> {
    if warmup_steps >= total_steps {
        return Err(Error::InvalidArgument(format!(
            "warmup ({warmup_steps} steps) must be shorter than training ({total_steps} steps)"
        )));
    }
    if step >= total_steps {
        return Err(Error::OutOfRange(format!("step {step} outside [0, {total_steps})")));
    }
    if step < warmup_steps {
        return Ok(base_lr * step as f64 / warmup_steps as f64);
    }
    let decay_steps = total_steps - 1 - warmup_steps;
    if decay_steps == 0 {
        return Ok(base_lr);
    }
    let progress = (step - warmup_steps) as f64 / decay_steps as f64;
    Ok(base_lr * 0.5 * (1.0 + (PI * progress).cos()))
}
