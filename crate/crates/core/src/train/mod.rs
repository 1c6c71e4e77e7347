//! Optimizer, pre-training and fine-tuning loops, NSP freezing.

mod adam;
mod finetune;
mod freeze;
mod pretrain;

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::rng::stream;

pub use adam::{AdamConfig, AdamSlot, AdamState};
pub use finetune::{FinetuneData, Finetuner, FinetuneRecord};
pub use freeze::{apply_freeze, FreezePolicy, FreezeTrigger};
pub use pretrain::{evaluate_pretrain, MetricsReport, PretrainData, Pretrainer, StepRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
    Probe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase: Phase,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size_short: usize,
    pub batch_size_long: usize,
    pub dropout_p: f64,
    pub total_steps: usize,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 disables.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl TrainConfig {
    /// lr 1e-4, weight decay 1e-4, batch 32 for short inputs and 1 for long ones.
    pub fn pretrain(total_steps: usize, seed: u64) -> Self {
        Self {
            phase: Phase::Pretrain,
            lr: 1e-4,
            weight_decay: 1e-4,
            batch_size_short: 32,
            batch_size_long: 1,
            dropout_p: 0.1,
            total_steps,
            seed,
            checkpoint_every: 0,
            adam: AdamConfig::default(),
        }
    }

    /// lr 1e-5, no weight decay, batch 1.
    pub fn finetune(total_steps: usize, seed: u64) -> Self {
        Self { phase: Phase::Finetune, lr: 1e-5, weight_decay: 0.0, batch_size_short: 1, batch_size_long: 1, ..Self::pretrain(total_steps, seed) }
    }

    /// lr 1e-3, no weight decay, batch 32.
    pub fn probe(total_steps: usize, seed: u64) -> Self {
        Self { phase: Phase::Probe, lr: 1e-3, weight_decay: 0.0, batch_size_short: 32, batch_size_long: 32, dropout_p: 0.0, ..Self::pretrain(total_steps, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(config_err(format!("lr {} must be finite and non-negative", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(config_err("weight_decay must be finite and non-negative"));
        }
        if self.batch_size_short == 0 || self.batch_size_long == 0 {
            return Err(config_err("batch sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(config_err(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        if self.total_steps == 0 {
            return Err(config_err("total_steps must be positive"));
        }
        Ok(())
    }

    pub(crate) fn expect_phase(&self, phase: Phase) -> Result<()> {
        if self.phase != phase {
            return Err(config_err(format!("training config is for phase {:?}, not {phase:?}", self.phase)));
        }
        Ok(())
    }
}

/// Where training stands; enough to resume bit-exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    /// Completed optimizer steps.
    pub step: usize,
    /// Completed steps when the NSP freeze took effect.
    pub freeze_step: Option<usize>,
    /// NSP loss of the latest step, read by the loss-threshold trigger.
    #[serde(default)]
    pub last_nsp_loss: Option<f64>,
}

/// Example indices for global draw positions `first..first + count` over a
/// pool of `len` items. Every pass over the pool is a fresh permutation
/// derived from `(seed, pool, epoch)`, so no iterator state is needed.
pub fn draw_indices(seed: u64, pool: &str, len: usize, first: usize, count: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    let mut cached: Option<(usize, Vec<usize>)> = None;
    for g in first..first + count {
        let epoch = g / len;
        if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut perm: Vec<usize> = (0..len).collect();
            let mut rng = stream(seed, pool, epoch as u64);
            for i in (1..len).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().map_or(0, |(_, p)| p[g % len]));
    }
    out
}
