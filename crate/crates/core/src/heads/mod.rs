//! Task classifiers that read from configurable encoder layers.

mod pretrain;
mod task;

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

pub use pretrain::{PretrainBatch, PretrainHeads, PretrainLossBreakdown, PretrainOutput};
pub use task::{NliHead, QaHead, QaOutput};

/// Which encoder layer (1-based) feeds each pre-training head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadPlacement {
    pub mlm_layer: usize,
    pub nsp_layer: usize,
    pub nsp_enabled: bool,
    pub bigram_shift_enabled: bool,
}

impl HeadPlacement {
    /// Both heads on the top layer, NSP on, bigram shift off.
    pub fn top(num_layers: usize) -> Self {
        Self { mlm_layer: num_layers, nsp_layer: num_layers, nsp_enabled: true, bigram_shift_enabled: false }
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        for (name, layer) in [("mlm_layer", self.mlm_layer), ("nsp_layer", self.nsp_layer)] {
            if layer == 0 || layer > num_layers {
                return Err(config_err(format!("{name} = {layer} outside [1, {num_layers}]")));
            }
        }
        Ok(())
    }

    pub fn is_lower_nsp(&self) -> bool {
        self.nsp_enabled && self.nsp_layer < self.mlm_layer
    }

    pub fn is_lower_mask(&self) -> bool {
        self.nsp_enabled && self.mlm_layer < self.nsp_layer
    }

    pub fn is_original(&self, num_layers: usize) -> bool {
        self.mlm_layer == num_layers && (!self.nsp_enabled || self.nsp_layer == num_layers)
    }
}

/// Layers a lowered head may move to: every layer below the top.
pub fn intermediate_layers(num_layers: usize) -> Vec<usize> {
    (1..num_layers).collect()
}

/// Sentence-level vector appended to every masked-LM classifier input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcatMode {
    #[default]
    None,
    ClsEmbedding,
    NspOutput,
}

impl ConcatMode {
    pub const ALL: [ConcatMode; 3] = [ConcatMode::None, ConcatMode::ClsEmbedding, ConcatMode::NspOutput];

    /// Width of the appended vector.
    pub fn width(self, hidden: usize) -> usize {
        match self {
            ConcatMode::None => 0,
            ConcatMode::ClsEmbedding => hidden,
            ConcatMode::NspOutput => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ConcatMode::None => "none",
            ConcatMode::ClsEmbedding => "cls_embedding",
            ConcatMode::NspOutput => "nsp_output",
        }
    }

    pub fn validate(self, nsp_enabled: bool) -> Result<()> {
        if self == ConcatMode::NspOutput && !nsp_enabled {
            return Err(config_err("concat mode nsp_output needs an NSP head"));
        }
        Ok(())
    }
}

/// What the NSP-output concatenation carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NspConcatRepr {
    #[default]
    Logits,
    Probabilities,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub mlm: f64,
    pub nsp: f64,
    pub bigram: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { mlm: 1.0, nsp: 1.0, bigram: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadsConfig {
    pub placement: HeadPlacement,
    pub concat: ConcatMode,
    #[serde(default)]
    pub nsp_repr: NspConcatRepr,
    #[serde(default)]
    pub tie_weights: bool,
    #[serde(default)]
    pub loss_weights: LossWeights,
}

impl HeadsConfig {
    pub fn baseline(num_layers: usize) -> Self {
        Self {
            placement: HeadPlacement::top(num_layers),
            concat: ConcatMode::None,
            nsp_repr: NspConcatRepr::Logits,
            tie_weights: false,
            loss_weights: LossWeights::default(),
        }
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        self.placement.validate(num_layers)?;
        self.concat.validate(self.placement.nsp_enabled)?;
        let w = self.loss_weights;
        if ![w.mlm, w.nsp, w.bigram].iter().all(|x| x.is_finite() && *x >= 0.0) {
            return Err(config_err("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}
