use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{draw_indices, AdamState, Phase, Progress, TrainConfig};
use crate::datapipe::{NliExample, QaExample};
use crate::encoder::{Mode, SeqBatch};
use crate::error::{config_err, input_err, Result};
use crate::heads::ConcatMode;
use crate::model::{Model, Task, TaskSpec};
use crate::rng::stream;
use crate::tensor::{ParamId, Tape};

#[derive(Clone, Debug, PartialEq)]
pub enum FinetuneData {
    Qa(Vec<QaExample>),
    Nli(Vec<NliExample>),
}

impl FinetuneData {
    pub fn task(&self) -> Task {
        match self {
            FinetuneData::Qa(_) => Task::Qa,
            FinetuneData::Nli(_) => Task::Nli,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            FinetuneData::Qa(v) => v.len(),
            FinetuneData::Nli(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub step: usize,
    pub loss: f64,
}

/// Fine-tuning with a fresh optimizer; every encoder parameter is trainable.
#[derive(Clone, Debug)]
pub struct Finetuner {
    pub model: Model,
    pub adam: AdamState,
    config: TrainConfig,
    progress: Progress,
}

impl Finetuner {
    /// Attach the task head described by `spec`. The request is validated
    /// against the pre-trained heads before any parameter is created.
    pub fn new(mut model: Model, spec: TaskSpec, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        config.expect_phase(Phase::Finetune)?;
        spec.validate(&model.config().heads)?;
        model.attach_task(spec, &mut stream(config.seed, "task-init", 0))?;
        let adam = AdamState::new(&model.params, config.adam);
        Self::resume(model, adam, config, Progress::default())
    }

    pub fn resume(model: Model, adam: AdamState, config: TrainConfig, progress: Progress) -> Result<Self> {
        config.validate()?;
        config.expect_phase(Phase::Finetune)?;
        if model.config().task.is_none() {
            return Err(config_err("model has no task head"));
        }
        if adam.slots.len() != model.params.len() {
            return Err(config_err("optimizer state does not match the parameter store"));
        }
        Ok(Self { model, adam, config, progress })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn progress(&self) -> Progress {
        self.progress
    }

    pub fn is_done(&self) -> bool {
        self.progress.step >= self.config.total_steps
    }

    fn trainable(&self) -> Vec<ParamId> {
        let mut ids = self.model.encoder.all_params();
        if self.model.qa.is_some_and(|h| h.concat == ConcatMode::NspOutput) {
            ids.extend(self.model.heads.nsp_params());
        }
        ids.extend(self.model.task_params());
        ids
    }

    pub fn train_step(&mut self, data: &FinetuneData) -> Result<FinetuneRecord> {
        if self.is_done() {
            return Err(config_err("training already reached total_steps"));
        }
        let spec = self.model.config().task.ok_or_else(|| config_err("model has no task head"))?;
        if data.task() != spec.task {
            return Err(config_err(alloc::format!("{} data given to a {} head", data.task().name(), spec.task.name())));
        }
        if data.is_empty() {
            return Err(input_err("no fine-tuning examples"));
        }
        let step = self.progress.step;
        let size = self.config.batch_size_short;
        let idx = draw_indices(self.config.seed, "order.finetune", data.len(), step * size, size);
        let mut tape = Tape::new();
        let mut rng = stream(self.config.seed, "dropout.finetune", step as u64);
        let mut mode = Mode::train(&mut rng).with_dropout(self.config.dropout_p);
        let mut seq = SeqBatch::new();
        let loss = match data {
            FinetuneData::Qa(ex) => {
                let mut spans = Vec::with_capacity(size);
                for &i in &idx {
                    seq.push(&ex[i].token_ids, &ex[i].segment_ids, &ex[i].attention_mask)?;
                    spans.push((ex[i].start, ex[i].end));
                }
                let out = self.model.qa_forward(&mut tape, &seq, &mut mode)?;
                let head = self.model.qa.ok_or_else(|| config_err("model has no QA head"))?;
                head.loss(&mut tape, &out, &seq, &spans)?
            }
            FinetuneData::Nli(ex) => {
                let mut labels = Vec::with_capacity(size);
                for &i in &idx {
                    seq.push(&ex[i].token_ids, &ex[i].segment_ids, &ex[i].attention_mask)?;
                    labels.push(ex[i].label.class());
                }
                let logits = self.model.nli_forward(&mut tape, &seq, &mut mode)?;
                let head = self.model.nli.ok_or_else(|| config_err("model has no NLI head"))?;
                head.loss(&mut tape, logits, &labels)?
            }
        };
        let value = tape.value(loss).item();
        tape.backward(loss)?;
        let grads = tape.param_grads(&self.model.params);
        let ids = self.trainable();
        self.adam.step(&mut self.model.params, &grads, &ids, self.config.lr, self.config.weight_decay)?;
        self.progress.step += 1;
        Ok(FinetuneRecord { step: step + 1, loss: value })
    }

    pub fn run(&mut self, data: &FinetuneData) -> Result<Vec<FinetuneRecord>> {
        let mut out = Vec::new();
        while !self.is_done() {
            out.push(self.train_step(data)?);
        }
        Ok(out)
    }
}
