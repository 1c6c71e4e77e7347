use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::masking::is_eligible;
use super::IGNORE;
use crate::error::{config_err, Result};
use crate::rng::Rng;

pub const IN_PLACE: i64 = 0;
pub const DISPLACED: i64 = 1;

/// How the swap probability is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapGranularity {
    /// Every candidate pair is swapped independently.
    #[default]
    PerBigram,
    /// With the given probability the input gets exactly one swap.
    PerInput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BigramConfig {
    pub enabled: bool,
    pub rate: f64,
    pub granularity: SwapGranularity,
}

impl Default for BigramConfig {
    fn default() -> Self {
        Self { enabled: false, rate: 0.15, granularity: SwapGranularity::PerBigram }
    }
}

impl BigramConfig {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.rate) {
            Ok(())
        } else {
            Err(config_err("bigram.rate must lie in [0, 1]"))
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BigramShift {
    /// [`IN_PLACE`] / [`DISPLACED`] for eligible tokens, [`IGNORE`] for specials and padding.
    pub labels: Vec<i64>,
    /// Left index of every swapped pair, ascending.
    pub swaps: Vec<usize>,
    /// Pairs on which a swap decision was taken.
    pub candidates: usize,
}

/// A pair can be swapped when both tokens are eligible and differ, so a
/// swap always changes the sequence.
fn is_candidate(tokens: &[usize], i: usize) -> bool {
    is_eligible(tokens[i]) && is_eligible(tokens[i + 1]) && tokens[i] != tokens[i + 1]
}

/// Labels for `tokens` after the swaps in `swaps` were applied.
pub fn bigram_labels(tokens: &[usize], swaps: &[usize]) -> Vec<i64> {
    let mut labels: Vec<i64> = tokens.iter().map(|&t| if is_eligible(t) { IN_PLACE } else { IGNORE }).collect();
    for &i in swaps {
        labels[i] = DISPLACED;
        labels[i + 1] = DISPLACED;
    }
    labels
}

/// Swap non-overlapping adjacent pairs scanning left to right. `mlm_labels`
/// is permuted alongside so every label stays with its token.
pub fn apply_bigram_shift(tokens: &mut [usize], mlm_labels: &mut [i64], config: &BigramConfig, rng: &mut Rng) -> BigramShift {
    let mut swaps = Vec::new();
    let mut candidates = 0;
    let n = tokens.len();
    match config.granularity {
        SwapGranularity::PerBigram => {
            let mut i = 0;
            while i + 1 < n {
                if !is_candidate(tokens, i) {
                    i += 1;
                    continue;
                }
                candidates += 1;
                if rng.random::<f64>() < config.rate {
                    swaps.push(i);
                    i += 2;
                } else {
                    i += 1;
                }
            }
        }
        SwapGranularity::PerInput => {
            let pairs: Vec<usize> = (0..n.saturating_sub(1)).filter(|&i| is_candidate(tokens, i)).collect();
            if !pairs.is_empty() {
                candidates = 1;
                if rng.random::<f64>() < config.rate {
                    swaps.push(pairs[rng.random_range(0..pairs.len())]);
                }
            }
        }
    }
    for &i in &swaps {
        tokens.swap(i, i + 1);
        mlm_labels.swap(i, i + 1);
    }
    BigramShift { labels: bigram_labels(tokens, &swaps), swaps, candidates }
}

/// Apply recorded swaps again; swaps are disjoint, so this restores the input.
pub fn undo_bigram_shift<T>(tokens: &mut [T], swaps: &[usize]) {
    for &i in swaps {
        tokens.swap(i, i + 1);
    }
}

/// Swap positions `(i, i+1)` unconditionally and return the labels.
pub fn forced_swap(tokens: &mut [usize], i: usize) -> Result<Vec<i64>> {
    if i + 1 >= tokens.len() || !is_candidate(tokens, i) {
        return Err(config_err(alloc::format!("position {i} does not start a swappable pair")));
    }
    tokens.swap(i, i + 1);
    Ok(bigram_labels(tokens, &[i]))
}
