//! Encoder plus heads over one parameter store.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoder::{Binder, Creator, Encoder, EncoderConfig, EncoderOutput, Mode, Registrar, SeqBatch};
use crate::error::{config_err, Result};
use crate::heads::{ConcatMode, HeadsConfig, NliHead, PretrainBatch, PretrainHeads, PretrainOutput, QaHead, QaOutput};
use crate::rng::{stream, Rng};
use crate::tensor::{ParamId, Params, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Qa,
    Nli,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Qa => "qa",
            Task::Nli => "nli",
        }
    }
}

/// Downstream head attached for fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: Task,
    pub ft_concat: ConcatMode,
}

impl TaskSpec {
    pub fn validate(&self, heads: &HeadsConfig) -> Result<()> {
        match (self.task, self.ft_concat) {
            (Task::Nli, ConcatMode::None) => Ok(()),
            (Task::Nli, _) => Err(config_err(
                "sentence-level fine-tuning uses only the [CLS] state at the NSP layer; concatenation is not available",
            )),
            (Task::Qa, ConcatMode::NspOutput) if !heads.placement.nsp_enabled => {
                Err(config_err("ft_concat nsp_output needs a checkpoint with an NSP head"))
            }
            (Task::Qa, _) => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub heads: HeadsConfig,
    #[serde(default)]
    pub task: Option<TaskSpec>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.heads.validate(self.encoder.num_layers)?;
        if let Some(t) = &self.task {
            t.validate(&self.heads)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    pub params: Params,
    pub encoder: Encoder,
    pub heads: PretrainHeads,
    pub qa: Option<QaHead>,
    pub nli: Option<NliHead>,
}

impl Model {
    fn register(config: &ModelConfig, r: &mut dyn Registrar) -> Result<(Encoder, PretrainHeads, Option<QaHead>, Option<NliHead>)> {
        config.validate()?;
        let encoder = Encoder::register(&config.encoder, r)?;
        let heads = PretrainHeads::register(&config.heads, &config.encoder, encoder.token_embedding, r)?;
        let (qa, nli) = register_task(config, r)?;
        Ok((encoder, heads, qa, nli))
    }

    /// Fresh parameters drawn from `stream(seed, "init", 0)`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = Params::new();
        let mut rng = stream(seed, "init", 0);
        let (encoder, heads, qa, nli) =
            Self::register(config, &mut Creator { params: &mut params, rng: &mut rng, std: config.encoder.init_std })?;
        Ok(Self { config: config.clone(), params, encoder, heads, qa, nli })
    }

    /// Attach to an existing parameter store, e.g. one read from a checkpoint.
    pub fn bind(config: &ModelConfig, params: Params) -> Result<Self> {
        let (encoder, heads, qa, nli) = Self::register(config, &mut Binder(&params))?;
        let model = Self { config: config.clone(), params, encoder, heads, qa, nli };
        let expected = model.all_params().len();
        if expected != model.params.len() {
            return Err(config_err(alloc::format!(
                "parameter store holds {} arrays, configuration expects {expected}",
                model.params.len()
            )));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Add a downstream head; its weights come from `rng`.
    pub fn attach_task(&mut self, spec: TaskSpec, rng: &mut Rng) -> Result<()> {
        if self.config.task.is_some() {
            return Err(config_err("model already carries a task head"));
        }
        spec.validate(&self.config.heads)?;
        let mut config = self.config.clone();
        config.task = Some(spec);
        let (qa, nli) = register_task(&config, &mut Creator { params: &mut self.params, rng, std: config.encoder.init_std })?;
        self.config = config;
        self.qa = qa;
        self.nli = nli;
        Ok(())
    }

    pub fn task_params(&self) -> Vec<ParamId> {
        let mut v = self.qa.map(|h| h.ids()).unwrap_or_default();
        v.extend(self.nli.map(|h| h.ids()).unwrap_or_default());
        v
    }

    pub fn all_params(&self) -> Vec<ParamId> {
        let mut v = self.encoder.all_params();
        v.extend(self.heads.all_params());
        v.extend(self.task_params());
        v
    }

    /// Every parameter the NSP loss reads: embeddings, layers `1..=nsp_layer`
    /// and the NSP head.
    pub fn nsp_dependencies(&self) -> Result<Vec<ParamId>> {
        let p = self.config.heads.placement;
        if !p.nsp_enabled {
            return Err(config_err("NSP head is disabled; nothing to freeze"));
        }
        let mut v = self.encoder.embedding_params();
        for k in 1..=p.nsp_layer {
            v.extend(self.encoder.layer_params(k));
        }
        v.extend(self.heads.nsp_params());
        Ok(v)
    }

    pub fn pretrain_forward(&self, tape: &mut Tape, batch: &PretrainBatch, mode: &mut Mode<'_>) -> Result<PretrainOutput> {
        self.heads.forward(&self.encoder, tape, &self.params, batch, mode)
    }

    pub fn encode(&self, tape: &mut Tape, seq: &SeqBatch, mode: &mut Mode<'_>) -> Result<EncoderOutput> {
        self.encoder.forward(tape, &self.params, seq, mode)
    }

    /// [CLS] states `[batch×hidden]` at the NSP layer.
    pub fn cls_states(&self, tape: &mut Tape, out: &EncoderOutput, seq: &SeqBatch) -> Result<Var> {
        tape.gather_rows(out.layer(self.config.heads.placement.nsp_layer), &seq.cls_rows())
    }

    pub fn qa_forward(&self, tape: &mut Tape, seq: &SeqBatch, mode: &mut Mode<'_>) -> Result<QaOutput> {
        let head = self.qa.ok_or_else(|| config_err("model has no QA head"))?;
        let out = self.encode(tape, seq, mode)?;
        let states = out.layer(self.config.heads.placement.mlm_layer);
        let sentence = match head.concat {
            ConcatMode::None => None,
            ConcatMode::ClsEmbedding => Some(self.cls_states(tape, &out, seq)?),
            ConcatMode::NspOutput => {
                let cls = self.cls_states(tape, &out, seq)?;
                Some(self.heads.nsp_forward(tape, &self.params, cls)?)
            }
        };
        head.forward(tape, &self.params, states, seq, sentence)
    }

    pub fn nli_forward(&self, tape: &mut Tape, seq: &SeqBatch, mode: &mut Mode<'_>) -> Result<Var> {
        let head = self.nli.ok_or_else(|| config_err("model has no NLI head"))?;
        let out = self.encode(tape, seq, mode)?;
        let cls = self.cls_states(tape, &out, seq)?;
        head.forward(tape, &self.params, cls)
    }
}

fn register_task(config: &ModelConfig, r: &mut dyn Registrar) -> Result<(Option<QaHead>, Option<NliHead>)> {
    let h = config.encoder.hidden_size;
    Ok(match config.task {
        None => (None, None),
        Some(TaskSpec { task: Task::Qa, ft_concat }) => (Some(QaHead::register(r, h, ft_concat)?), None),
        Some(TaskSpec { task: Task::Nli, .. }) => (None, Some(NliHead::register(r, h)?)),
    })
}
