//! Named model variants and the consistency rules of an experiment cell.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::heads::{intermediate_layers, ConcatMode, HeadPlacement};
use crate::model::{Task, TaskSpec};
use crate::train::FreezePolicy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    BertBaseline,
    LowerNsp,
    LowerMask,
    LowerNspFreeze,
    WithoutNsp,
    BigramShift,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::BertBaseline, Variant::LowerNsp, Variant::LowerMask, Variant::LowerNspFreeze, Variant::WithoutNsp, Variant::BigramShift];

    pub fn name(self) -> &'static str {
        match self {
            Variant::BertBaseline => "bert_baseline",
            Variant::LowerNsp => "lower_nsp",
            Variant::LowerMask => "lower_mask",
            Variant::LowerNspFreeze => "lower_nsp_freeze",
            Variant::WithoutNsp => "without_nsp",
            Variant::BigramShift => "bigram_shift",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| config_err(format!("unknown variant `{s}`")))
    }

    /// Whether the variant moves a head below the top layer.
    pub fn is_lowered(self) -> bool {
        matches!(self, Variant::LowerNsp | Variant::LowerMask | Variant::LowerNspFreeze)
    }

    /// Canonical placement; `layer` picks the lowered head's layer.
    pub fn placement(self, num_layers: usize, layer: Option<usize>) -> Result<HeadPlacement> {
        let top = HeadPlacement::top(num_layers);
        let lowered = || layer.ok_or_else(|| config_err(format!("variant {} needs a layer", self.name())));
        let p = match self {
            Variant::BertBaseline => top,
            Variant::LowerNsp | Variant::LowerNspFreeze => HeadPlacement { nsp_layer: lowered()?, ..top },
            Variant::LowerMask => HeadPlacement { mlm_layer: lowered()?, ..top },
            Variant::WithoutNsp => HeadPlacement { nsp_enabled: false, ..top },
            Variant::BigramShift => HeadPlacement { bigram_shift_enabled: true, ..top },
        };
        self.check_placement(&p, num_layers)?;
        Ok(p)
    }

    /// Every admissible placement: all intermediate layers for lowered
    /// variants, the single canonical one otherwise.
    pub fn placements(self, num_layers: usize) -> Vec<HeadPlacement> {
        if self.is_lowered() {
            intermediate_layers(num_layers).into_iter().filter_map(|k| self.placement(num_layers, Some(k)).ok()).collect()
        } else {
            self.placement(num_layers, None).into_iter().collect()
        }
    }

    pub fn check_placement(self, p: &HeadPlacement, num_layers: usize) -> Result<()> {
        p.validate(num_layers)?;
        let l = num_layers;
        let ok = match self {
            Variant::BertBaseline => p.nsp_enabled && p.mlm_layer == l && p.nsp_layer == l && !p.bigram_shift_enabled,
            Variant::LowerNsp | Variant::LowerNspFreeze => {
                p.nsp_enabled && p.mlm_layer == l && p.nsp_layer < l && !p.bigram_shift_enabled
            }
            Variant::LowerMask => p.nsp_enabled && p.nsp_layer == l && p.mlm_layer < l && !p.bigram_shift_enabled,
            Variant::WithoutNsp => !p.nsp_enabled && p.mlm_layer == l && !p.bigram_shift_enabled,
            Variant::BigramShift => p.nsp_enabled && p.mlm_layer == l && p.nsp_layer == l && p.bigram_shift_enabled,
        };
        if ok {
            Ok(())
        } else {
            Err(config_err(format!(
                "placement mlm_layer={} nsp_layer={} nsp={} bigram={} is inconsistent with variant {}",
                p.mlm_layer,
                p.nsp_layer,
                p.nsp_enabled,
                p.bigram_shift_enabled,
                self.name()
            )))
        }
    }

    pub fn check_freeze(self, freeze: &FreezePolicy) -> Result<()> {
        match (self, freeze.enabled) {
            (Variant::LowerNspFreeze, false) => Err(config_err("variant lower_nsp_freeze needs freeze.enabled = true")),
            (Variant::LowerNspFreeze, true) | (_, false) => Ok(()),
            (v, true) => Err(config_err(format!("variant {} does not freeze", v.name()))),
        }
    }
}

/// One point of an experiment matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub variant: Variant,
    pub placement: HeadPlacement,
    pub pt_concat: ConcatMode,
    pub ft_concat: ConcatMode,
    pub task: Task,
    pub seed: u64,
}

impl Cell {
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        self.variant.check_placement(&self.placement, num_layers)?;
        self.pt_concat.validate(self.placement.nsp_enabled).map_err(|_| {
            config_err(format!("pt_concat nsp_output is unavailable for {}: it has no NSP head", self.variant.name()))
        })?;
        let heads = crate::heads::HeadsConfig { concat: self.pt_concat, ..crate::heads::HeadsConfig::baseline(num_layers) };
        let heads = crate::heads::HeadsConfig { placement: self.placement, ..heads };
        TaskSpec { task: self.task, ft_concat: self.ft_concat }.validate(&heads)
    }

    pub fn label(&self) -> String {
        format!(
            "{}/mlm{}/nsp{}/pt-{}/ft-{}/{}/seed{}",
            self.variant.name(),
            self.placement.mlm_layer,
            self.placement.nsp_layer,
            self.pt_concat.name(),
            self.ft_concat.name(),
            self.task.name(),
            self.seed
        )
    }
}

/// Cartesian product of variants × placements × PT concat × FT concat × seeds,
/// each paired with its validation outcome.
pub fn matrix(
    variants: &[Variant],
    num_layers: usize,
    pt: &[ConcatMode],
    ft: &[ConcatMode],
    task: Task,
    seeds: &[u64],
) -> Vec<(Cell, Result<()>)> {
    let mut out = Vec::new();
    for &variant in variants {
        for placement in variant.placements(num_layers) {
            for &pt_concat in pt {
                for &ft_concat in ft {
                    for &seed in seeds {
                        let cell = Cell { variant, placement, pt_concat, ft_concat, task, seed };
                        let verdict = cell.validate(num_layers);
                        out.push((cell, verdict));
                    }
                }
            }
        }
    }
    out
}
