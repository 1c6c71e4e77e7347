use crate::error::{config_err, Result};

pub const SHORT_LEN: usize = 128;
pub const LONG_LEN: usize = 384;

/// Number of steps run at [`SHORT_LEN`]: `ceil(0.9 · total)`, in integers.
pub fn short_steps(total_steps: usize) -> usize {
    (9 * total_steps).div_ceil(10)
}

pub fn length_schedule(step: usize, total_steps: usize) -> Result<usize> {
    if step >= total_steps {
        return Err(config_err(alloc::format!("step {step} outside schedule of {total_steps} steps")));
    }
    Ok(if step < short_steps(total_steps) { SHORT_LEN } else { LONG_LEN })
}
