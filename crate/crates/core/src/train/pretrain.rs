use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{draw_indices, AdamState, FreezePolicy, Phase, Progress, TrainConfig};
use crate::datapipe::schedule::{length_schedule, short_steps, LONG_LEN};
use crate::datapipe::PretrainExample;
use crate::encoder::Mode;
use crate::error::{config_err, input_err, Result};
use crate::heads::{PretrainBatch, PretrainLossBreakdown};
use crate::model::Model;
use crate::rng::stream;
use crate::tensor::{ParamId, Tape};

/// Example pools for the two scheduled lengths.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainData {
    pub short: Vec<PretrainExample>,
    /// Falls back to `short` when empty.
    pub long: Vec<PretrainExample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based.
    pub step: usize,
    pub max_len: usize,
    pub batch_size: usize,
    pub mlm_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nsp_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bigram_loss: Option<f64>,
    pub total_loss: f64,
    pub frozen: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub records: Vec<StepRecord>,
    pub freeze_step: Option<usize>,
}

/// Stateful pre-training run. All randomness is derived from the seed and
/// the step number.
#[derive(Clone, Debug)]
pub struct Pretrainer {
    pub model: Model,
    pub adam: AdamState,
    config: TrainConfig,
    freeze: FreezePolicy,
    progress: Progress,
    frozen: BTreeSet<ParamId>,
}

impl Pretrainer {
    pub fn new(model: Model, config: TrainConfig, freeze: FreezePolicy) -> Result<Self> {
        let adam = AdamState::new(&model.params, config.adam);
        Self::resume(model, adam, config, freeze, Progress::default())
    }

    /// Continue from saved state.
    pub fn resume(model: Model, adam: AdamState, config: TrainConfig, freeze: FreezePolicy, progress: Progress) -> Result<Self> {
        config.validate()?;
        config.expect_phase(Phase::Pretrain)?;
        freeze.validate(model.config().heads.placement.nsp_enabled)?;
        if adam.slots.len() != model.params.len() {
            return Err(config_err("optimizer state does not match the parameter store"));
        }
        if progress.step > config.total_steps {
            return Err(config_err("checkpoint step lies beyond total_steps"));
        }
        let frozen = match progress.freeze_step {
            Some(_) => model.nsp_dependencies()?.into_iter().collect(),
            None => BTreeSet::new(),
        };
        Ok(Self { model, adam, config, freeze, progress, frozen })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn freeze_policy(&self) -> &FreezePolicy {
        &self.freeze
    }

    pub fn progress(&self) -> Progress {
        self.progress
    }

    pub fn is_done(&self) -> bool {
        self.progress.step >= self.config.total_steps
    }

    pub fn frozen(&self) -> &BTreeSet<ParamId> {
        &self.frozen
    }

    /// Examples drawn for 0-based `step`, with their scheduled length.
    pub fn batch_for_step<'d>(&self, data: &'d PretrainData, step: usize) -> Result<(usize, Vec<&'d PretrainExample>)> {
        let c = &self.config;
        let max_len = length_schedule(step, c.total_steps)?;
        let (pool, label, size, first) = if max_len == LONG_LEN {
            let size = c.batch_size_long;
            let first = (step - short_steps(c.total_steps)) * size;
            let pool = if data.long.is_empty() { &data.short } else { &data.long };
            (pool, "order.long", size, first)
        } else {
            (&data.short, "order.short", c.batch_size_short, step * c.batch_size_short)
        };
        if pool.is_empty() {
            return Err(input_err("no pre-training examples"));
        }
        let idx = draw_indices(c.seed, label, pool.len(), first, size);
        Ok((max_len, idx.into_iter().map(|i| &pool[i]).collect()))
    }

    fn trainable(&self) -> Vec<ParamId> {
        self.model.all_params().into_iter().filter(|id| !self.frozen.contains(id)).collect()
    }

    /// Run one optimizer step.
    pub fn train_step(&mut self, data: &PretrainData) -> Result<StepRecord> {
        if self.is_done() {
            return Err(config_err("training already reached total_steps"));
        }
        if self.progress.freeze_step.is_none() && self.freeze.fires(self.progress.step, self.config.total_steps, self.progress.last_nsp_loss) {
            self.frozen = self.model.nsp_dependencies()?.into_iter().collect();
            self.progress.freeze_step = Some(self.progress.step);
        }
        let step = self.progress.step;
        let (max_len, examples) = self.batch_for_step(data, step)?;
        let batch = PretrainBatch::from_examples(examples.iter().copied())?;
        let mut tape = Tape::new();
        let mut rng = stream(self.config.seed, "dropout", step as u64);
        let out = self.model.pretrain_forward(&mut tape, &batch, &mut Mode::train(&mut rng).with_dropout(self.config.dropout_p))?;
        let losses = out.breakdown(&tape);
        tape.backward(out.total)?;
        let grads = tape.param_grads(&self.model.params);
        let ids = self.trainable();
        self.adam.step(&mut self.model.params, &grads, &ids, self.config.lr, self.config.weight_decay)?;
        self.progress.step += 1;
        self.progress.last_nsp_loss = losses.nsp_loss;
        Ok(StepRecord {
            step: step + 1,
            max_len,
            batch_size: examples.len(),
            mlm_loss: losses.mlm_loss,
            nsp_loss: losses.nsp_loss,
            bigram_loss: losses.bigram_loss,
            total_loss: losses.total,
            frozen: self.progress.freeze_step.is_some(),
        })
    }

    /// Train until `total_steps`, calling `on_step` after every step.
    pub fn run<F>(&mut self, data: &PretrainData, mut on_step: F) -> Result<MetricsReport>
    where
        F: FnMut(&StepRecord, &Self) -> Result<()>,
    {
        let mut report = MetricsReport::default();
        while !self.is_done() {
            let rec = self.train_step(data)?;
            on_step(&rec, self)?;
            report.records.push(rec);
        }
        report.freeze_step = self.progress.freeze_step;
        Ok(report)
    }
}

/// Dropout-free losses over `examples` in chunks of `batch_size`, each
/// component averaged over chunks weighted by chunk size.
pub fn evaluate_pretrain(model: &Model, examples: &[PretrainExample], batch_size: usize) -> Result<PretrainLossBreakdown> {
    if examples.is_empty() || batch_size == 0 {
        return Err(input_err("nothing to evaluate"));
    }
    let mut acc = PretrainLossBreakdown { mlm_loss: 0.0, nsp_loss: None, bigram_loss: None, total: 0.0 };
    let add = |slot: &mut Option<f64>, v: Option<f64>, w: f64| {
        if let Some(v) = v {
            *slot = Some(slot.unwrap_or(0.0) + w * v);
        }
    };
    let mut rng = stream(0, "eval", 0);
    for chunk in examples.chunks(batch_size) {
        let batch = PretrainBatch::from_examples(chunk)?;
        let mut tape = Tape::new();
        let out = model.pretrain_forward(&mut tape, &batch, &mut Mode::eval(&mut rng))?;
        let b = out.breakdown(&tape);
        let w = chunk.len() as f64 / examples.len() as f64;
        acc.mlm_loss += w * b.mlm_loss;
        acc.total += w * b.total;
        add(&mut acc.nsp_loss, b.nsp_loss, w);
        add(&mut acc.bigram_loss, b.bigram_loss, w);
    }
    Ok(acc)
}
