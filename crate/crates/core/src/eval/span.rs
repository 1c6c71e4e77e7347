use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    pub impossible: bool,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanDecoder {
    pub max_answer_len: usize,
    /// Impossible wins when the [CLS] score exceeds the best span score by more than this.
    pub null_threshold: f64,
}

impl Default for SpanDecoder {
    fn default() -> Self {
        Self { max_answer_len: 30, null_threshold: 0.0 }
    }
}

impl SpanDecoder {
    /// Best `start ≤ end` pair inside `context_start..=context_end`, or
    /// impossible (`(0, 0)`) when position 0 scores higher.
    pub fn decode(&self, start_logits: &[f64], end_logits: &[f64], context_start: usize, context_end: usize) -> Result<SpanPrediction> {
        let n = start_logits.len();
        if end_logits.len() != n || context_start > context_end || context_end >= n || context_start == 0 {
            return Err(input_err("span logits do not cover the context segment"));
        }
        let mut best: Option<SpanPrediction> = None;
        for s in context_start..=context_end {
            let last = context_end.min(s + self.max_answer_len.max(1) - 1);
            for e in s..=last {
                let score = start_logits[s] + end_logits[e];
                if best.is_none_or(|b| score > b.score) {
                    best = Some(SpanPrediction { start: s, end: e, impossible: false, score });
                }
            }
        }
        let best = best.ok_or_else(|| input_err("empty context"))?;
        let null = start_logits[0] + end_logits[0];
        Ok(if null > best.score + self.null_threshold {
            SpanPrediction { start: 0, end: 0, impossible: true, score: null }
        } else {
            best
        })
    }
}
