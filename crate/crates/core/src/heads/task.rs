use alloc::vec::Vec;

use super::ConcatMode;
use crate::encoder::{Linear, Registrar, SeqBatch};
use crate::error::{config_err, Result};
use crate::tensor::{ParamId, Params, Tape, Var};

/// Start/end scorer over token states.
#[derive(Clone, Copy, Debug)]
pub struct QaHead {
    pub span: Linear,
    pub concat: ConcatMode,
}

#[derive(Clone, Debug)]
pub struct QaOutput {
    /// `[rows×2]`: column 0 scores starts, column 1 scores ends.
    pub logits: Var,
}

impl QaHead {
    pub(crate) fn register(r: &mut dyn Registrar, hidden: usize, concat: ConcatMode) -> Result<Self> {
        Ok(Self { span: Linear::register(r, "task.qa.span", hidden + concat.width(hidden), 2)?, concat })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.span.ids().to_vec()
    }

    /// `sentence` carries one vector per sequence when concatenation is on.
    pub fn forward(&self, tape: &mut Tape, params: &Params, token_states: Var, seq: &SeqBatch, sentence: Option<Var>) -> Result<QaOutput> {
        let input = match (self.concat, sentence) {
            (ConcatMode::None, None) => token_states,
            (ConcatMode::None, Some(_)) | (_, None) => return Err(config_err("QA head concat mode and sentence vector disagree")),
            (_, Some(s)) => {
                let s = tape.gather_rows(s, &seq.row_owner())?;
                tape.concat_cols(&[token_states, s])?
            }
        };
        Ok(QaOutput { logits: self.span.forward(tape, params, input)? })
    }

    /// Mean over sequences of the start and end cross-entropies, each taken
    /// over that sequence's positions.
    pub fn loss(&self, tape: &mut Tape, out: &QaOutput, seq: &SeqBatch, spans: &[(usize, usize)]) -> Result<Var> {
        if spans.len() != seq.len() {
            return Err(config_err("one gold span per sequence required"));
        }
        let mut total: Option<Var> = None;
        for (s, &(start, end)) in seq.spans.iter().zip(spans) {
            let rows: Vec<usize> = (s.offset..s.offset + s.len).collect();
            let part = tape.gather_rows(out.logits, &rows)?;
            let by_position = tape.transpose(part)?;
            let ce = tape.cross_entropy(by_position, &[start as i64, end as i64], None)?;
            total = Some(match total {
                None => ce.loss,
                Some(t) => tape.add(t, ce.loss)?,
            });
        }
        let total = total.ok_or_else(|| config_err("empty QA batch"))?;
        Ok(if seq.len() == 1 { total } else { tape.scale(total, 1.0 / seq.len() as f64) })
    }
}

/// Three-way classifier on the [CLS] state.
#[derive(Clone, Copy, Debug)]
pub struct NliHead {
    pub classifier: Linear,
}

impl NliHead {
    pub(crate) fn register(r: &mut dyn Registrar, hidden: usize) -> Result<Self> {
        Ok(Self { classifier: Linear::register(r, "task.nli.classifier", hidden, 3)? })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.classifier.ids().to_vec()
    }

    pub fn forward(&self, tape: &mut Tape, params: &Params, cls: Var) -> Result<Var> {
        self.classifier.forward(tape, params, cls)
    }

    pub fn loss(&self, tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
        let targets: Vec<i64> = labels.iter().map(|&l| l as i64).collect();
        Ok(tape.cross_entropy(logits, &targets, None)?.loss)
    }
}
