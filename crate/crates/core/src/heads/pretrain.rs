use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ConcatMode, HeadsConfig, NspConcatRepr};
use crate::datapipe::{PretrainExample, IGNORE};
use crate::encoder::{Encoder, EncoderConfig, EncoderOutput, Init, LayerNorm, Linear, Mode, Registrar, SeqBatch};
use crate::error::{config_err, input_err, Result};
use crate::tensor::{ParamId, Params, Tape, Var};

/// Pre-training batch with padding trimmed; sequences are packed row-wise.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainBatch {
    pub seq: SeqBatch,
    /// Packed rows carrying a masked-LM label, ascending.
    pub mlm_rows: Vec<usize>,
    pub mlm_targets: Vec<i64>,
    /// Sequence index of each entry of `mlm_rows`.
    pub mlm_owner: Vec<usize>,
    pub nsp_targets: Vec<i64>,
    /// One label per packed row.
    pub bigram_targets: Vec<i64>,
}

impl PretrainBatch {
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a PretrainExample>) -> Result<Self> {
        let mut b = Self::default();
        for (i, ex) in examples.into_iter().enumerate() {
            let n = ex.content_len();
            let offset = b.seq.rows();
            b.seq.push(&ex.token_ids[..n], &ex.segment_ids[..n], &ex.attention_mask[..n])?;
            for (j, &label) in ex.mlm_labels[..n].iter().enumerate() {
                if label != IGNORE {
                    b.mlm_rows.push(offset + j);
                    b.mlm_targets.push(label);
                    b.mlm_owner.push(i);
                }
            }
            b.nsp_targets.push(ex.nsp_label.class());
            b.bigram_targets.extend_from_slice(&ex.bigram_labels[..n]);
        }
        if b.seq.is_empty() {
            return Err(input_err("empty pre-training batch"));
        }
        if b.mlm_rows.is_empty() {
            return Err(input_err("pre-training batch has no masked positions"));
        }
        Ok(b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainLossBreakdown {
    pub mlm_loss: f64,
    pub nsp_loss: Option<f64>,
    pub bigram_loss: Option<f64>,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutput {
    pub encoder: EncoderOutput,
    pub mlm_logits: Var,
    pub nsp_logits: Option<Var>,
    pub bigram_logits: Option<Var>,
    pub mlm: Var,
    pub nsp: Option<Var>,
    pub bigram: Option<Var>,
    pub total: Var,
}

impl PretrainOutput {
    pub fn breakdown(&self, tape: &Tape) -> PretrainLossBreakdown {
        PretrainLossBreakdown {
            mlm_loss: tape.value(self.mlm).item(),
            nsp_loss: self.nsp.map(|v| tape.value(v).item()),
            bigram_loss: self.bigram.map(|v| tape.value(v).item()),
            total: tape.value(self.total).item(),
        }
    }
}

/// Masked-LM, NSP and bigram-shift classifiers.
#[derive(Clone, Debug)]
pub struct PretrainHeads {
    config: HeadsConfig,
    hidden: usize,
    eps: f64,
    token_embedding: ParamId,
    pub nsp: Option<Linear>,
    pub mlm_transform: Linear,
    pub mlm_norm: LayerNorm,
    /// `None` when the output projection reuses the token embedding table.
    pub mlm_decoder: Option<ParamId>,
    pub mlm_bias: ParamId,
    pub bigram: Option<Linear>,
}

impl PretrainHeads {
    pub(crate) fn register(config: &HeadsConfig, enc: &EncoderConfig, token_embedding: ParamId, r: &mut dyn Registrar) -> Result<Self> {
        config.validate(enc.num_layers)?;
        let h = enc.hidden_size;
        let p = &config.placement;
        let nsp = if p.nsp_enabled { Some(Linear::register(r, "heads.nsp", h, 2)?) } else { None };
        let mlm_transform = Linear::register(r, "heads.mlm.transform", h + config.concat.width(h), h)?;
        let mlm_norm = LayerNorm::register(r, "heads.mlm.norm", h)?;
        let mlm_decoder =
            if config.tie_weights { None } else { Some(r.param("heads.mlm.decoder.weight", &[h, enc.vocab_size], Init::Normal)?) };
        let mlm_bias = r.param("heads.mlm.decoder.bias", &[enc.vocab_size], Init::Zeros)?;
        let bigram = if p.bigram_shift_enabled { Some(Linear::register(r, "heads.bigram", h, 2)?) } else { None };
        Ok(Self {
            config: config.clone(),
            hidden: h,
            eps: enc.layer_norm_eps,
            token_embedding,
            nsp,
            mlm_transform,
            mlm_norm,
            mlm_decoder,
            mlm_bias,
            bigram,
        })
    }

    pub fn config(&self) -> &HeadsConfig {
        &self.config
    }

    pub fn nsp_params(&self) -> Vec<ParamId> {
        self.nsp.map(|l| l.ids().to_vec()).unwrap_or_default()
    }

    pub fn mlm_params(&self) -> Vec<ParamId> {
        let mut v = self.mlm_transform.ids().to_vec();
        v.extend(self.mlm_norm.ids());
        v.extend(self.mlm_decoder);
        v.push(self.mlm_bias);
        v
    }

    pub fn bigram_params(&self) -> Vec<ParamId> {
        self.bigram.map(|l| l.ids().to_vec()).unwrap_or_default()
    }

    pub fn all_params(&self) -> Vec<ParamId> {
        let mut v = self.nsp_params();
        v.extend(self.mlm_params());
        v.extend(self.bigram_params());
        v
    }

    /// Two-class logits from [CLS] states `[batch×hidden]`.
    pub fn nsp_forward(&self, tape: &mut Tape, params: &Params, cls: Var) -> Result<Var> {
        let head = self.nsp.ok_or_else(|| config_err("NSP head is disabled"))?;
        head.forward(tape, params, cls)
    }

    /// Vocabulary logits for `rows` of `token_states`. With concatenation,
    /// `sentence` holds one vector per sequence and the sequence index of
    /// every row.
    pub fn mlm_forward(
        &self,
        tape: &mut Tape,
        params: &Params,
        token_states: Var,
        rows: &[usize],
        sentence: Option<(Var, &[usize])>,
    ) -> Result<Var> {
        let x = tape.gather_rows(token_states, rows)?;
        let want = self.config.concat.width(self.hidden);
        let input = match (self.config.concat, sentence) {
            (ConcatMode::None, None) => x,
            (ConcatMode::None, Some(_)) => return Err(config_err("sentence vector given but concat mode is none")),
            (mode, None) => return Err(config_err(format!("concat mode {} needs a sentence vector", mode.name()))),
            (mode, Some((s, owner))) => {
                let got = tape.value(s).cols();
                if got != want {
                    return Err(config_err(format!("concat mode {} expects width {want}, got {got}", mode.name())));
                }
                if owner.len() != rows.len() {
                    return Err(config_err("sentence owner list does not match masked rows"));
                }
                let s = tape.gather_rows(s, owner)?;
                tape.concat_cols(&[x, s])?
            }
        };
        let h = self.mlm_transform.forward(tape, params, input)?;
        let h = tape.gelu(h);
        let h = self.mlm_norm.forward(tape, params, h, self.eps)?;
        let logits = match self.mlm_decoder {
            Some(w) => {
                let w = tape.param(params, w);
                tape.matmul(h, w)?
            }
            None => {
                let table = tape.param(params, self.token_embedding);
                tape.matmul_nt(h, table)?
            }
        };
        let b = tape.param(params, self.mlm_bias);
        tape.add_bias(logits, b)
    }

    /// Per-token in-place / displaced logits.
    pub fn bigram_shift_forward(&self, tape: &mut Tape, params: &Params, token_states: Var) -> Result<Var> {
        let head = self.bigram.ok_or_else(|| config_err("bigram-shift head is disabled"))?;
        head.forward(tape, params, token_states)
    }

    /// Run the encoder once and every enabled head from its tap.
    pub fn forward(
        &self,
        encoder: &Encoder,
        tape: &mut Tape,
        params: &Params,
        batch: &PretrainBatch,
        mode: &mut Mode<'_>,
    ) -> Result<PretrainOutput> {
        let p = self.config.placement;
        let out = encoder.forward(tape, params, &batch.seq, mode)?;
        let cls_rows = batch.seq.cls_rows();
        let nsp_states = out.layer(p.nsp_layer);
        let mlm_states = out.layer(p.mlm_layer);

        let mut cls = None;
        let (nsp_logits, nsp) = if p.nsp_enabled {
            let c = tape.gather_rows(nsp_states, &cls_rows)?;
            cls = Some(c);
            let logits = self.nsp_forward(tape, params, c)?;
            let ce = tape.cross_entropy(logits, &batch.nsp_targets, None)?;
            (Some(logits), Some(ce.loss))
        } else {
            (None, None)
        };
        let sentence = match self.config.concat {
            ConcatMode::None => None,
            ConcatMode::ClsEmbedding => Some(match cls {
                Some(c) => c,
                None => tape.gather_rows(nsp_states, &cls_rows)?,
            }),
            ConcatMode::NspOutput => {
                let logits = nsp_logits.ok_or_else(|| config_err("concat mode nsp_output needs an NSP head"))?;
                Some(match self.config.nsp_repr {
                    NspConcatRepr::Logits => logits,
                    NspConcatRepr::Probabilities => tape.softmax(logits, 1)?,
                })
            }
        };
        let mlm_logits =
            self.mlm_forward(tape, params, mlm_states, &batch.mlm_rows, sentence.map(|s| (s, batch.mlm_owner.as_slice())))?;
        let mlm = tape.cross_entropy(mlm_logits, &batch.mlm_targets, Some(IGNORE))?.loss;

        let (bigram_logits, bigram) = if p.bigram_shift_enabled {
            let logits = self.bigram_shift_forward(tape, params, mlm_states)?;
            let ce = tape.cross_entropy(logits, &batch.bigram_targets, Some(IGNORE))?;
            (Some(logits), Some(ce.loss))
        } else {
            (None, None)
        };

        let w = self.config.loss_weights;
        let mut total = weighted(tape, mlm, w.mlm);
        for (loss, weight) in [(nsp, w.nsp), (bigram, w.bigram)] {
            if let Some(l) = loss {
                let l = weighted(tape, l, weight);
                total = tape.add(total, l)?;
            }
        }
        Ok(PretrainOutput { encoder: out, mlm_logits, nsp_logits, bigram_logits, mlm, nsp, bigram, total })
    }
}

fn weighted(tape: &mut Tape, loss: Var, weight: f64) -> Var {
    if weight == 1.0 {
        loss
    } else {
        tape.scale(loss, weight)
    }
}
