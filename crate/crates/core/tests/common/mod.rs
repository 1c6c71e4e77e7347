#![allow(dead_code)]

use hibert_core::datapipe::{NspLabel, PretrainExample, Vocab, IGNORE};
use hibert_core::encoder::{EncoderConfig, Mode};
use hibert_core::heads::{ConcatMode, HeadPlacement, HeadsConfig, PretrainBatch, PretrainOutput};
use hibert_core::model::{Model, ModelConfig};
use hibert_core::rng::stream;
use hibert_core::tensor::{Gradients, Tape};
use rand::Rng;

pub fn encoder(vocab: usize, layers: usize, hidden: usize) -> EncoderConfig {
    EncoderConfig {
        num_layers: layers,
        num_heads: 2,
        hidden_size: hidden,
        ff_size: 2 * hidden,
        dropout_p: 0.0,
        ..EncoderConfig::desk(vocab)
    }
}

pub fn model(vocab: usize, layers: usize, hidden: usize, placement: HeadPlacement, concat: ConcatMode, seed: u64) -> Model {
    let heads = HeadsConfig { placement, concat, ..HeadsConfig::baseline(layers) };
    Model::init(&ModelConfig { encoder: encoder(vocab, layers, hidden), heads, task: None }, seed).unwrap()
}

/// A well-formed sentence pair of random non-special tokens, padded to `max_len`.
pub fn random_example(rng: &mut impl Rng, vocab: usize, max_len: usize) -> PretrainExample {
    let a = rng.random_range(1..=(max_len - 3) / 2);
    let b = rng.random_range(1..=(max_len - 3) / 2);
    let mut token_ids = vec![Vocab::CLS];
    let mut segment_ids = vec![0];
    for _ in 0..a {
        token_ids.push(rng.random_range(Vocab::NUM_SPECIAL..vocab));
        segment_ids.push(0);
    }
    token_ids.push(Vocab::SEP);
    segment_ids.push(0);
    for _ in 0..b {
        token_ids.push(rng.random_range(Vocab::NUM_SPECIAL..vocab));
        segment_ids.push(1);
    }
    token_ids.push(Vocab::SEP);
    segment_ids.push(1);
    let n = token_ids.len();
    let mut attention_mask = vec![true; n];
    let mut mlm_labels = vec![IGNORE; n];
    let mut bigram_labels = vec![IGNORE; n];
    for i in 0..n {
        if !Vocab::is_special(token_ids[i]) {
            bigram_labels[i] = i64::from(rng.random_bool(0.5));
            if rng.random_bool(0.3) {
                mlm_labels[i] = rng.random_range(Vocab::NUM_SPECIAL..vocab) as i64;
            }
        }
    }
    // at least one masked position per example
    mlm_labels[1] = rng.random_range(Vocab::NUM_SPECIAL..vocab) as i64;
    token_ids.resize(max_len, Vocab::PAD);
    segment_ids.resize(max_len, 0);
    attention_mask.resize(max_len, false);
    mlm_labels.resize(max_len, IGNORE);
    bigram_labels.resize(max_len, IGNORE);
    let nsp_label = if rng.random_bool(0.5) { NspLabel::IsNext } else { NspLabel::NotNext };
    PretrainExample { token_ids, segment_ids, attention_mask, mlm_labels, nsp_label, bigram_labels, max_len }
}

pub fn random_examples(seed: u64, count: usize, vocab: usize, max_len: usize) -> Vec<PretrainExample> {
    let mut rng = stream(seed, "test-batch", 0);
    (0..count).map(|_| random_example(&mut rng, vocab, max_len)).collect()
}

pub fn random_batch(seed: u64, count: usize, vocab: usize, max_len: usize) -> PretrainBatch {
    PretrainBatch::from_examples(&random_examples(seed, count, vocab, max_len)).unwrap()
}

#[derive(Clone, Copy, Debug)]
pub enum Loss {
    Mlm,
    Nsp,
    Bigram,
    Total,
}

/// Evaluation-mode forward pass plus the parameter gradients of one loss.
pub fn grads_of(model: &Model, batch: &PretrainBatch, which: Loss) -> (f64, Gradients) {
    let mut tape = Tape::new();
    let mut rng = stream(0, "unused", 0);
    let out: PretrainOutput = model.pretrain_forward(&mut tape, batch, &mut Mode::eval(&mut rng)).unwrap();
    let loss = match which {
        Loss::Mlm => out.mlm,
        Loss::Nsp => out.nsp.expect("NSP enabled"),
        Loss::Bigram => out.bigram.expect("bigram enabled"),
        Loss::Total => out.total,
    };
    let value = tape.value(loss).item();
    tape.backward(loss).unwrap();
    (value, tape.param_grads(&model.params))
}
