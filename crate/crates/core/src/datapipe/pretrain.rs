use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::bigram::{apply_bigram_shift, bigram_labels, BigramConfig};
use super::corpus::Document;
use super::masking::{apply_masking, MaskingConfig, MaskingStats};
use super::nsp::{make_nsp_pairs, NspLabel};
use super::vocab::Vocab;
use crate::error::{config_err, input_err, Result};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainExample {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub attention_mask: Vec<bool>,
    pub mlm_labels: Vec<i64>,
    pub nsp_label: NspLabel,
    pub bigram_labels: Vec<i64>,
    pub max_len: usize,
}

impl PretrainExample {
    /// Number of non-padding positions.
    pub fn content_len(&self) -> usize {
        self.attention_mask.iter().rposition(|&m| m).map_or(0, |i| i + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub min_freq: usize,
    pub masking: MaskingConfig,
    pub bigram: BigramConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { min_freq: 1, masking: MaskingConfig::default(), bigram: BigramConfig::default() }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.masking.validate()?;
        self.bigram.validate()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub examples: usize,
    pub is_next: usize,
    pub nsp_imbalanced: bool,
    pub masking: MaskingStats,
    pub bigram_candidates: usize,
    pub bigram_swaps: usize,
    pub truncated: usize,
}

/// Trim the longer of the two sentences from its end until both fit in `budget`.
pub fn truncate_pair(a: &mut Vec<usize>, b: &mut Vec<usize>, budget: usize) -> bool {
    let mut cut = false;
    while a.len() + b.len() > budget {
        cut = true;
        if a.len() >= b.len() {
            a.pop();
        } else {
            b.pop();
        }
    }
    cut
}

/// `[CLS] a [SEP] b [SEP]` padded to `max_len`, with segment ids and mask.
pub fn assemble_pair(a: &[usize], b: &[usize], max_len: usize) -> Result<(Vec<usize>, Vec<usize>, Vec<bool>)> {
    let used = a.len() + b.len() + 3;
    if used > max_len {
        return Err(input_err(alloc::format!("pair of {used} tokens exceeds max_len {max_len}")));
    }
    let mut tokens = Vec::with_capacity(max_len);
    tokens.push(Vocab::CLS);
    tokens.extend_from_slice(a);
    tokens.push(Vocab::SEP);
    tokens.extend_from_slice(b);
    tokens.push(Vocab::SEP);
    let mut segments = vec![0; a.len() + 2];
    segments.resize(used, 1);
    let mut mask = vec![true; used];
    tokens.resize(max_len, Vocab::PAD);
    segments.resize(max_len, 0);
    mask.resize(max_len, false);
    Ok((tokens, segments, mask))
}

/// Build NSP pairs from `documents`, then mask and optionally bigram-shift
/// each one. Every stochastic stage draws from its own stream derived from
/// `seed` and the example index, so the same corpus yields the same pairs
/// and corruptions at every `max_len` up to truncation.
pub fn build_pretrain_examples(
    documents: &[Document],
    vocab: &Vocab,
    max_len: usize,
    config: &PipelineConfig,
    seed: u64,
) -> Result<(Vec<PretrainExample>, PipelineStats)> {
    config.validate()?;
    if max_len < 5 {
        return Err(config_err("max_len must leave room for two sentences"));
    }
    let encoded: Vec<Vec<Vec<usize>>> = documents
        .iter()
        .map(|d| d.iter().map(|s| vocab.encode(s)).filter(|s| !s.is_empty()).collect())
        .collect();
    let pairs = make_nsp_pairs(&encoded, &mut stream(seed, "nsp", 0));
    if pairs.pairs.is_empty() {
        return Err(input_err("corpus has no document with two or more sentences"));
    }
    let mut stats = PipelineStats { nsp_imbalanced: pairs.imbalanced, ..PipelineStats::default() };
    let mut out = Vec::with_capacity(pairs.pairs.len());
    for (i, pair) in pairs.pairs.into_iter().enumerate() {
        let index = i as u64;
        let (mut a, mut b) = (pair.first, pair.second);
        stats.truncated += usize::from(truncate_pair(&mut a, &mut b, max_len - 3));
        let (mut tokens, segment_ids, attention_mask) = assemble_pair(&a, &b, max_len)?;
        let (mut mlm_labels, m) = apply_masking(&mut tokens, vocab.len(), &config.masking, &mut stream(seed, "mask", index));
        stats.masking.merge(&m);
        let bigram = if config.bigram.enabled {
            let shift = apply_bigram_shift(&mut tokens, &mut mlm_labels, &config.bigram, &mut stream(seed, "bigram", index));
            stats.bigram_candidates += shift.candidates;
            stats.bigram_swaps += shift.swaps.len();
            shift.labels
        } else {
            bigram_labels(&tokens, &[])
        };
        stats.is_next += usize::from(pair.label == NspLabel::IsNext);
        out.push(PretrainExample {
            token_ids: tokens,
            segment_ids,
            attention_mask,
            mlm_labels,
            nsp_label: pair.label,
            bigram_labels: bigram,
            max_len,
        });
    }
    stats.examples = out.len();
    Ok((out, stats))
}
