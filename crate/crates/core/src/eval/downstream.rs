use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::metrics::{exact_match, f1_overlap};
use super::span::{SpanDecoder, SpanPrediction};
use crate::datapipe::{NliExample, QaExample};
use crate::encoder::{Mode, SeqBatch};
use crate::error::{input_err, Result};
use crate::model::Model;
use crate::rng::stream;
use crate::tensor::Tape;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaScores {
    /// Percentages in [0, 100].
    pub exact_match: f64,
    pub f1: f64,
    pub count: usize,
}

pub fn predict_qa(model: &Model, example: &QaExample, decoder: &SpanDecoder) -> Result<SpanPrediction> {
    let seq = SeqBatch::single(&example.token_ids, &example.segment_ids, &example.attention_mask)?;
    let mut tape = Tape::new();
    let mut rng = stream(0, "eval", 0);
    let out = model.qa_forward(&mut tape, &seq, &mut Mode::eval(&mut rng))?;
    let logits = tape.value(out.logits);
    let starts: Vec<f64> = (0..logits.rows()).map(|r| logits.row(r)[0]).collect();
    let ends: Vec<f64> = (0..logits.rows()).map(|r| logits.row(r)[1]).collect();
    decoder.decode(&starts, &ends, example.context_start, example.context_end)
}

/// Predicted answer text, `None` for an abstention.
pub fn prediction_text(example: &QaExample, pred: &SpanPrediction) -> Option<String> {
    (!pred.impossible).then(|| example.span_text(pred.start, pred.end))
}

pub fn evaluate_qa(model: &Model, examples: &[QaExample], decoder: &SpanDecoder) -> Result<QaScores> {
    if examples.is_empty() {
        return Err(input_err("no QA examples to evaluate"));
    }
    let (mut em, mut f1) = (0.0, 0.0);
    for ex in examples {
        let pred = predict_qa(model, ex, decoder)?;
        let text = prediction_text(ex, &pred);
        em += exact_match(text.as_deref(), &ex.answers);
        f1 += f1_overlap(text.as_deref(), &ex.answers);
    }
    let n = examples.len() as f64;
    Ok(QaScores { exact_match: 100.0 * em / n, f1: 100.0 * f1 / n, count: examples.len() })
}

/// Fraction of correctly classified examples.
pub fn evaluate_nli(model: &Model, examples: &[NliExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(input_err("no NLI examples to evaluate"));
    }
    let mut correct = 0usize;
    let mut rng = stream(0, "eval", 0);
    for ex in examples {
        let seq = SeqBatch::single(&ex.token_ids, &ex.segment_ids, &ex.attention_mask)?;
        let mut tape = Tape::new();
        let logits = model.nli_forward(&mut tape, &seq, &mut Mode::eval(&mut rng))?;
        correct += usize::from(argmax(tape.value(logits).row(0)) == ex.label.class());
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Index of the first maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
