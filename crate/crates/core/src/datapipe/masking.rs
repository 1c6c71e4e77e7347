use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::vocab::Vocab;
use super::IGNORE;
use crate::error::{config_err, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskingConfig {
    /// Fraction of eligible tokens selected per example.
    pub rate: f64,
    /// Of the selected tokens: share replaced by [MASK] and share replaced by a random token.
    /// The remainder is left unchanged.
    pub mask_share: f64,
    pub random_share: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self { rate: 0.15, mask_share: 0.8, random_share: 0.1 }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.rate)
            && self.mask_share >= 0.0
            && self.random_share >= 0.0
            && self.mask_share + self.random_share <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(config_err("masking rates must lie in [0, 1] and mask_share + random_share <= 1"))
        }
    }
}

/// Counts of what a masking pass did.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskingStats {
    pub eligible: usize,
    pub selected: usize,
    pub to_mask: usize,
    pub to_random: usize,
    pub unchanged: usize,
}

impl MaskingStats {
    pub fn merge(&mut self, o: &MaskingStats) {
        self.eligible += o.eligible;
        self.selected += o.selected;
        self.to_mask += o.to_mask;
        self.to_random += o.to_random;
        self.unchanged += o.unchanged;
    }
}

/// [CLS], [SEP] and [PAD] are never corrupted.
pub fn is_eligible(id: usize) -> bool {
    id != Vocab::CLS && id != Vocab::SEP && id != Vocab::PAD
}

/// Select `rate` of the eligible positions (at least one when any exist) and
/// corrupt them in place. Returns the label row: original ids at selected
/// positions, [`IGNORE`] elsewhere.
///
/// The selection count is `floor(rate·n + u)` with `u ~ U[0,1)`, so its mean
/// is exactly `rate·n` whenever that is at least one.
pub fn apply_masking(
    tokens: &mut [usize],
    vocab_size: usize,
    config: &MaskingConfig,
    rng: &mut Rng,
) -> (Vec<i64>, MaskingStats) {
    let mut labels = vec![IGNORE; tokens.len()];
    let mut eligible: Vec<usize> = (0..tokens.len()).filter(|&i| is_eligible(tokens[i])).collect();
    let mut stats = MaskingStats { eligible: eligible.len(), ..MaskingStats::default() };
    if eligible.is_empty() {
        return (labels, stats);
    }
    let n = eligible.len();
    let u: f64 = rng.random();
    let k = (libm::floor(config.rate * n as f64 + u) as usize).clamp(1, n);
    // partial Fisher-Yates: the first k entries become a uniform k-subset
    for i in 0..k {
        let j = rng.random_range(i..n);
        eligible.swap(i, j);
    }
    let mut chosen = eligible[..k].to_vec();
    chosen.sort_unstable();
    for pos in chosen {
        labels[pos] = tokens[pos] as i64;
        let r: f64 = rng.random();
        if r < config.mask_share {
            tokens[pos] = Vocab::MASK;
            stats.to_mask += 1;
        } else if r < config.mask_share + config.random_share && vocab_size > Vocab::NUM_SPECIAL {
            tokens[pos] = rng.random_range(Vocab::NUM_SPECIAL..vocab_size);
            stats.to_random += 1;
        } else {
            stats.unchanged += 1;
        }
    }
    stats.selected = k;
    (labels, stats)
}
