use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::model::Model;
use crate::tensor::ParamId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum FreezeTrigger {
    /// After this fraction of the total steps, rounded to the nearest step.
    AtFraction(f64),
    /// After this many completed steps.
    AtStep(usize),
    /// Once a step's NSP training loss falls below the threshold.
    NspLossBelow(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreezePolicy {
    pub enabled: bool,
    pub trigger: FreezeTrigger,
}

impl Default for FreezePolicy {
    fn default() -> Self {
        Self { enabled: false, trigger: FreezeTrigger::AtFraction(0.5) }
    }
}

impl FreezePolicy {
    pub fn at_step(step: usize) -> Self {
        Self { enabled: true, trigger: FreezeTrigger::AtStep(step) }
    }

    pub fn validate(&self, nsp_enabled: bool) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        if !nsp_enabled {
            return Err(config_err("NSP freezing needs an NSP head"));
        }
        match self.trigger {
            FreezeTrigger::AtFraction(f) if !(0.0..=1.0).contains(&f) => Err(config_err("freeze fraction must lie in [0, 1]")),
            FreezeTrigger::NspLossBelow(x) if !x.is_finite() => Err(config_err("freeze loss threshold must be finite")),
            _ => Ok(()),
        }
    }

    /// Whether freezing should take effect after `completed` of `total` steps.
    pub fn fires(&self, completed: usize, total: usize, last_nsp_loss: Option<f64>) -> bool {
        self.enabled
            && match self.trigger {
                FreezeTrigger::AtFraction(f) => completed >= libm::round(f * total as f64) as usize,
                FreezeTrigger::AtStep(k) => completed >= k,
                FreezeTrigger::NspLossBelow(x) => last_nsp_loss.is_some_and(|l| l < x),
            }
    }
}

/// Everything the NSP loss reads: embedding tables and their norm, encoder
/// layers up to the NSP tap, and the NSP classifier.
pub fn apply_freeze(model: &Model) -> Result<Vec<ParamId>> {
    model.nsp_dependencies()
}
