use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::downstream::argmax;
use super::probe_data::{ProbeDataset, ProbeItem};
use crate::datapipe::Vocab;
use crate::encoder::{Creator, Linear, Mode, SeqBatch};
use crate::error::{config_err, input_err, Error, Result};
use crate::model::Model;
use crate::rng::stream;
use crate::tensor::{ParamId, Params, Tape, Tensor};
use crate::train::{AdamConfig, AdamState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { hidden: vec![128, 128], lr: 1e-3, weight_decay: 0.0, batch_size: 32, epochs: 40, seed: 0 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&h| h == 0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(config_err("probe sizes and epochs must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(config_err("probe lr must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub dataset: String,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub majority_rate: f64,
    pub encoder_fingerprint: u64,
}

/// [CLS] state at the NSP layer for `[CLS] tokens [SEP]`, dropout off.
pub fn probe_features(model: &Model, vocab: &Vocab, items: &[ProbeItem]) -> Result<Tensor> {
    let hidden = model.config().encoder.hidden_size;
    let max_tokens = model.config().encoder.max_position - 2;
    let mut data = Vec::with_capacity(items.len() * hidden);
    let mut rng = stream(0, "eval", 0);
    for chunk in items.chunks(64) {
        let mut seq = SeqBatch::new();
        for it in chunk {
            let mut ids = vec![Vocab::CLS];
            ids.extend(it.tokens.iter().take(max_tokens).map(|t| vocab.id(t)));
            ids.push(Vocab::SEP);
            seq.push(&ids, &vec![0; ids.len()], &vec![true; ids.len()])?;
        }
        let mut tape = Tape::new();
        let out = model.encode(&mut tape, &seq, &mut Mode::eval(&mut rng))?;
        let cls = model.cls_states(&mut tape, &out, &seq)?;
        data.extend_from_slice(tape.value(cls).data());
    }
    Tensor::new(vec![items.len(), hidden], data)
}

struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    fn new(params: &mut Params, input: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(classes);
        let mut rng = stream(seed, "probe.init", 0);
        let mut layers = Vec::new();
        for (k, w) in widths.windows(2).enumerate() {
            let std = 1.0 / libm::sqrt(w[0] as f64);
            let mut c = Creator { params: &mut *params, rng: &mut rng, std };
            layers.push(Linear::register(&mut c, &alloc::format!("probe.layer{}", k + 1), w[0], w[1])?);
        }
        Ok(Self { layers })
    }

    fn ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.ids()).collect()
    }

    fn logits(&self, tape: &mut Tape, params: &Params, x: Tensor) -> Result<crate::tensor::Var> {
        let mut h = tape.constant(x);
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(tape, params, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

fn gather(features: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * features.cols());
    for &r in rows {
        data.extend_from_slice(features.row(r));
    }
    Tensor::new(vec![rows.len(), features.cols()], data)
}

fn accuracy(mlp: &Mlp, params: &Params, features: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let logits = mlp.logits(&mut tape, params, features.clone())?;
    let v = tape.value(logits);
    let correct = (0..labels.len()).filter(|&i| argmax(v.row(i)) == labels[i]).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Train an MLP on fixed features; returns the best validation accuracy and its epoch.
pub fn train_probe(
    train_x: &Tensor,
    train_y: &[usize],
    val_x: &Tensor,
    val_y: &[usize],
    num_classes: usize,
    config: &ProbeConfig,
) -> Result<(f64, usize)> {
    config.validate()?;
    if train_y.is_empty() || val_y.is_empty() || train_x.rows() != train_y.len() || val_x.rows() != val_y.len() {
        return Err(input_err("probe needs non-empty train and validation splits"));
    }
    let mut params = Params::new();
    let mlp = Mlp::new(&mut params, train_x.cols(), &config.hidden, num_classes, config.seed)?;
    let ids = mlp.ids();
    let mut adam = AdamState::new(&params, AdamConfig::default());
    let mut best = (f64::NEG_INFINITY, 0);
    let n = train_y.len();
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = stream(config.seed, "probe.order", epoch as u64);
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let logits = mlp.logits(&mut tape, &params, gather(train_x, chunk)?)?;
            let targets: Vec<i64> = chunk.iter().map(|&i| train_y[i] as i64).collect();
            let loss = tape.cross_entropy(logits, &targets, None)?.loss;
            tape.backward(loss)?;
            let grads = tape.param_grads(&params);
            adam.step(&mut params, &grads, &ids, config.lr, config.weight_decay)?;
        }
        let acc = accuracy(&mlp, &params, val_x, val_y)?;
        if acc > best.0 {
            best = (acc, epoch);
        }
    }
    Ok(best)
}

/// Probe a frozen encoder. Fails if any encoder parameter changed.
pub fn probe_run(model: &Model, vocab: &Vocab, dataset: &ProbeDataset, config: &ProbeConfig) -> Result<ProbeResult> {
    let encoder_ids = model.encoder.all_params();
    let before = model.params.fingerprint(encoder_ids.iter().copied());
    let train_x = probe_features(model, vocab, &dataset.train)?;
    let val_x = probe_features(model, vocab, &dataset.val)?;
    let train_y: Vec<usize> = dataset.train.iter().map(|i| i.label).collect();
    let val_y: Vec<usize> = dataset.val.iter().map(|i| i.label).collect();
    let (best_val_accuracy, best_epoch) = train_probe(&train_x, &train_y, &val_x, &val_y, dataset.num_classes, config)?;
    let after = model.params.fingerprint(encoder_ids.iter().copied());
    if before != after {
        return Err(Error::Integrity(alloc::format!("encoder fingerprint changed during probing: {before:016x} -> {after:016x}")));
    }
    Ok(ProbeResult {
        dataset: dataset.name.clone(),
        best_val_accuracy,
        best_epoch,
        majority_rate: dataset.majority_rate(),
        encoder_fingerprint: after,
    })
}
