use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::pretrain::truncate_pair;
use super::vocab::{tokenize_with_offsets, Vocab};
use crate::error::{config_err, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    /// Character offset of `text` inside the context.
    pub start: usize,
}

/// An extractive QA record. No answers means the question is unanswerable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub id: String,
    pub question: String,
    pub context: String,
    pub answers: Vec<Answer>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NliLabel {
    Entailment,
    Contradiction,
    Neutral,
}

impl NliLabel {
    pub const ALL: [NliLabel; 3] = [NliLabel::Entailment, NliLabel::Contradiction, NliLabel::Neutral];

    pub fn class(self) -> usize {
        match self {
            NliLabel::Entailment => 0,
            NliLabel::Contradiction => 1,
            NliLabel::Neutral => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliRecord {
    pub premise: String,
    pub hypothesis: String,
    pub label: NliLabel,
}

/// `[CLS] question [SEP] context [SEP]` with the gold span in sequence positions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub attention_mask: Vec<bool>,
    /// Inclusive sequence positions of the first and last context token.
    pub context_start: usize,
    pub context_end: usize,
    /// Gold span; `(0, 0)` on [CLS] when impossible.
    pub start: usize,
    pub end: usize,
    pub impossible: bool,
    pub context: String,
    /// Character span of each kept context token.
    pub offsets: Vec<(usize, usize)>,
    pub answers: Vec<String>,
}

impl QaExample {
    /// Source text covered by sequence positions `start..=end` of the context.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        if start < self.context_start || end > self.context_end || start > end {
            return String::new();
        }
        let from = self.offsets[start - self.context_start].0;
        let to = self.offsets[end - self.context_start].1;
        self.context.chars().skip(from).take(to - from).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliExample {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub attention_mask: Vec<bool>,
    pub label: NliLabel,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneStats {
    pub kept: usize,
    /// Answer text did not match the context or fell between tokens.
    pub skipped_unaligned: usize,
    /// Answer lost to truncation.
    pub skipped_truncated: usize,
}

/// Map a character span onto the first and last overlapping tokens.
fn char_span_to_tokens(offsets: &[(usize, usize)], start: usize, end: usize) -> Option<(usize, usize)> {
    let first = offsets.iter().position(|&(_, e)| e > start)?;
    let last = offsets.iter().rposition(|&(s, _)| s < end)?;
    (first <= last).then_some((first, last))
}

pub fn build_qa_examples(records: &[QaRecord], vocab: &Vocab, max_len: usize) -> Result<(Vec<QaExample>, FinetuneStats)> {
    let mut stats = FinetuneStats::default();
    let mut out = Vec::new();
    for r in records {
        let q: Vec<usize> = vocab.encode(&r.question);
        let ctx_tokens = tokenize_with_offsets(&r.context);
        let budget = max_len.checked_sub(q.len() + 3).filter(|&b| b > 0).ok_or_else(|| {
            config_err(alloc::format!("question `{}` leaves no room for context at max_len {max_len}", r.id))
        })?;
        let kept = ctx_tokens.len().min(budget);
        let offsets: Vec<(usize, usize)> = ctx_tokens[..kept].iter().map(|t| (t.start, t.end)).collect();
        let context_start = q.len() + 2;
        if kept == 0 {
            stats.skipped_unaligned += 1;
            continue;
        }
        let context_end = context_start + kept - 1;

        let (start, end, impossible) = if r.answers.is_empty() {
            (0, 0, true)
        } else {
            let a = &r.answers[0];
            let len = a.text.chars().count();
            let slice: String = r.context.chars().skip(a.start).take(len).collect();
            if slice != a.text || len == 0 {
                stats.skipped_unaligned += 1;
                continue;
            }
            let all: Vec<(usize, usize)> = ctx_tokens.iter().map(|t| (t.start, t.end)).collect();
            let Some((s, e)) = char_span_to_tokens(&all, a.start, a.start + len) else {
                stats.skipped_unaligned += 1;
                continue;
            };
            if e >= kept {
                stats.skipped_truncated += 1;
                continue;
            }
            (context_start + s, context_start + e, false)
        };

        let mut token_ids = Vec::with_capacity(context_end + 2);
        token_ids.push(Vocab::CLS);
        token_ids.extend_from_slice(&q);
        token_ids.push(Vocab::SEP);
        token_ids.extend(ctx_tokens[..kept].iter().map(|t| vocab.id(&t.text)));
        token_ids.push(Vocab::SEP);
        let mut segment_ids = vec![0; context_start];
        segment_ids.resize(token_ids.len(), 1);
        out.push(QaExample {
            id: r.id.clone(),
            attention_mask: vec![true; token_ids.len()],
            token_ids,
            segment_ids,
            context_start,
            context_end,
            start,
            end,
            impossible,
            context: r.context.clone(),
            offsets,
            answers: r.answers.iter().map(|a| a.text.clone()).collect(),
        });
        stats.kept += 1;
    }
    Ok((out, stats))
}

pub fn build_nli_examples(records: &[NliRecord], vocab: &Vocab, max_len: usize) -> Result<Vec<NliExample>> {
    if max_len < 5 {
        return Err(config_err("max_len must leave room for two sentences"));
    }
    Ok(records
        .iter()
        .map(|r| {
            let mut a = vocab.encode(&r.premise);
            let mut b = vocab.encode(&r.hypothesis);
            truncate_pair(&mut a, &mut b, max_len - 3);
            let mut token_ids = vec![Vocab::CLS];
            token_ids.extend_from_slice(&a);
            token_ids.push(Vocab::SEP);
            let mut segment_ids = vec![0; token_ids.len()];
            token_ids.extend_from_slice(&b);
            token_ids.push(Vocab::SEP);
            segment_ids.resize(token_ids.len(), 1);
            NliExample { attention_mask: vec![true; token_ids.len()], token_ids, segment_ids, label: r.label }
        })
        .collect())
}
