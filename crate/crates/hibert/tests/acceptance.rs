//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::{bytes, Workspace};
use hibert::checkpoint::{MANIFEST_FILE, PAYLOAD_FILE, VOCAB_FILE};
use hibert::commands::{pretrain, sweep};
use hibert::dataset::build_data;
use hibert_core::datapipe::masking::is_eligible;
use hibert_core::datapipe::synth::{qa_records, toy_corpus};
use hibert_core::datapipe::{
    build_pretrain_examples, build_qa_examples, BigramConfig, NspLabel, PipelineConfig, PipelineStats, PretrainExample, Vocab,
    IGNORE, LONG_LEN, SHORT_LEN,
};
use hibert_core::encoder::{EncoderConfig, Mode};
use hibert_core::eval::{bigram_shift_probe, evaluate_qa, exact_match, f1_overlap, probe_run, ProbeConfig, SpanDecoder};
use hibert_core::experiment::Variant;
use hibert_core::heads::{ConcatMode, HeadPlacement, HeadsConfig, PretrainBatch};
use hibert_core::model::{Model, ModelConfig, Task, TaskSpec};
use hibert_core::rng::{stream, Rng as Stream};
use hibert_core::tensor::{kernels, Gradients, ParamId, Tape};
use hibert_core::train::{
    apply_freeze, evaluate_pretrain, FinetuneData, Finetuner, FreezePolicy, PretrainData, Pretrainer, TrainConfig,
};
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient fidelity", gradient_fidelity),
        ("hierarchy isolation", hierarchy_isolation),
        ("baseline equivalence", baseline_equivalence),
        ("data statistics", data_statistics),
        ("freeze correctness", freeze_correctness),
        ("overfit sanity", overfit_sanity),
        ("metric oracles", metric_oracles),
        ("probe integrity", probe_integrity),
        ("determinism and persistence", determinism_and_persistence),
        ("sweep shape", sweep_shape),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({secs:.1}s) {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({secs:.1}s) {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- fixtures

fn encoder(vocab: usize, layers: usize, hidden: usize, heads: usize) -> EncoderConfig {
    EncoderConfig {
        num_layers: layers,
        num_heads: heads,
        hidden_size: hidden,
        ff_size: 2 * hidden,
        dropout_p: 0.0,
        ..EncoderConfig::desk(vocab)
    }
}

fn model(enc: EncoderConfig, placement: HeadPlacement, concat: ConcatMode, seed: u64) -> Model {
    let heads = HeadsConfig { placement, concat, ..HeadsConfig::baseline(enc.num_layers) };
    Model::init(&ModelConfig { encoder: enc, heads, task: None }, seed).unwrap()
}

/// `[CLS] a [SEP] b [SEP]` of random ordinary tokens with random labels, padded to `max_len`.
fn random_example(rng: &mut Stream, vocab: usize, max_len: usize) -> PretrainExample {
    let half = (max_len - 3) / 2;
    let (a, b) = (rng.random_range(1..=half), rng.random_range(1..=half));
    let mut token_ids = vec![Vocab::CLS];
    let mut segment_ids = vec![0];
    for (seg, len) in [(0, a), (1, b)] {
        for _ in 0..len {
            token_ids.push(rng.random_range(Vocab::NUM_SPECIAL..vocab));
            segment_ids.push(seg);
        }
        token_ids.push(Vocab::SEP);
        segment_ids.push(seg);
    }
    let n = token_ids.len();
    let mut mlm_labels = vec![IGNORE; max_len];
    let mut bigram_labels = vec![IGNORE; max_len];
    for i in 0..n {
        if is_eligible(token_ids[i]) {
            bigram_labels[i] = i64::from(rng.random_bool(0.3));
            if rng.random_bool(0.25) || i == 1 {
                mlm_labels[i] = rng.random_range(Vocab::NUM_SPECIAL..vocab) as i64;
            }
        }
    }
    let mut attention_mask = vec![true; n];
    token_ids.resize(max_len, Vocab::PAD);
    segment_ids.resize(max_len, 0);
    attention_mask.resize(max_len, false);
    let nsp_label = if rng.random_bool(0.5) { NspLabel::IsNext } else { NspLabel::NotNext };
    PretrainExample { token_ids, segment_ids, attention_mask, mlm_labels, nsp_label, bigram_labels, max_len }
}

fn random_examples(seed: u64, count: usize, vocab: usize, max_len: usize) -> Vec<PretrainExample> {
    let mut rng = stream(seed, "acceptance-batch", 0);
    (0..count).map(|_| random_example(&mut rng, vocab, max_len)).collect()
}

#[derive(Clone, Copy)]
enum Loss {
    Mlm,
    Nsp,
    Total,
}

fn loss_and_grads(m: &Model, batch: &PretrainBatch, which: Loss, grads: bool) -> (f64, Option<Gradients>) {
    let mut tape = Tape::new();
    let mut rng = stream(0, "eval", 0);
    let out = m.pretrain_forward(&mut tape, batch, &mut Mode::eval(&mut rng)).unwrap();
    let loss = match which {
        Loss::Mlm => out.mlm,
        Loss::Nsp => out.nsp.unwrap(),
        Loss::Total => out.total,
    };
    let value = tape.value(loss).item();
    if !grads {
        return (value, None);
    }
    tape.backward(loss).unwrap();
    (value, Some(tape.param_grads(&m.params)))
}

fn toy_pretrain_data(docs: usize, seed: u64, bigram: bool) -> (Vocab, PretrainData) {
    let corpus = toy_corpus(docs, 3, 6, &mut stream(seed, "corpus", 0));
    let vocab = Vocab::build(corpus.iter().flatten().map(String::as_str), 1).unwrap();
    let cfg = PipelineConfig { bigram: BigramConfig { enabled: bigram, ..BigramConfig::default() }, ..PipelineConfig::default() };
    let (short, _) = build_pretrain_examples(&corpus, &vocab, SHORT_LEN, &cfg, seed).unwrap();
    let (long, _) = build_pretrain_examples(&corpus, &vocab, LONG_LEN, &cfg, seed).unwrap();
    (vocab, PretrainData { short, long })
}

// ---------------------------------------------------------------- 1

fn gradient_fidelity() -> Outcome {
    const H: f64 = 2e-4;
    const TOL: f64 = 1e-4;
    let placement = HeadPlacement { bigram_shift_enabled: true, ..HeadPlacement::top(2) };
    let mut m = model(encoder(32, 2, 8, 2), placement, ConcatMode::ClsEmbedding, 21);
    let batch = PretrainBatch::from_examples(&random_examples(21, 3, 32, 14)).unwrap();
    let (_, g) = loss_and_grads(&m, &batch, Loss::Total, true);
    let g = g.unwrap();
    let ids: Vec<ParamId> = m.params.ids().collect();
    let (mut checked, mut worst, mut worst_at) = (0usize, 0.0f64, String::new());
    for id in ids {
        let n = m.params.get(id).numel();
        for j in 0..n {
            let orig = m.params.get(id).data()[j];
            let mut central = |h: f64| {
                m.params.get_mut(id).data_mut()[j] = orig + h;
                let plus = loss_and_grads(&m, &batch, Loss::Total, false).0;
                m.params.get_mut(id).data_mut()[j] = orig - h;
                let minus = loss_and_grads(&m, &batch, Loss::Total, false).0;
                m.params.get_mut(id).data_mut()[j] = orig;
                (plus - minus) / (2.0 * h)
            };
            // Richardson step over two central differences cancels the h² term
            let numeric = (4.0 * central(H / 2.0) - central(H)) / 3.0;
            let analytic = g.get(id).map_or(0.0, |t| t.data()[j]);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            if err > worst {
                worst = err;
                worst_at = format!("{}[{j}] analytic {analytic:e} numeric {numeric:e}", m.params.name(id));
            }
            checked += 1;
        }
    }
    ensure!(worst <= TOL, "max relative error {worst:.2e} at {worst_at}");
    Ok(format!("{checked} scalars across {} arrays, max relative error {worst:.2e} at {worst_at}", m.params.len()))
}

// ---------------------------------------------------------------- 2

fn hierarchy_isolation() -> Outcome {
    let cases = [("lower nsp", 4, 2, Loss::Nsp), ("lower mask", 2, 4, Loss::Mlm)];
    let mut scalars = 0;
    for (name, mlm, nsp, loss) in cases {
        for seed in 0..10 {
            let p = HeadPlacement { mlm_layer: mlm, nsp_layer: nsp, ..HeadPlacement::top(4) };
            let m = model(encoder(40, 4, 8, 2), p, ConcatMode::None, seed);
            let batch = PretrainBatch::from_examples(&random_examples(seed, 4, 40, 20)).unwrap();
            let g = loss_and_grads(&m, &batch, loss, true).1.unwrap();
            for k in 3..=4 {
                for id in m.encoder.layer_params(k) {
                    let t = g.get(id);
                    ensure!(
                        t.is_none_or(|t| t.data().iter().all(|&v| v == 0.0)),
                        "{name}: nonzero gradient on {}",
                        m.params.name(id)
                    );
                    scalars += m.params.get(id).numel();
                }
            }
            // the tapped layers do receive gradient
            for k in 1..=2 {
                ensure!(m.encoder.layer_params(k).iter().any(|&id| g.is_nonzero(id)), "{name}: layer {k} got no gradient");
            }
        }
    }
    Ok(format!("{scalars} layer-3/4 scalars exactly zero over 20 model/batch draws"))
}

// ---------------------------------------------------------------- 3

/// A plain per-sequence BERT forward over padded inputs, reading weights by name.
struct Reference<'a> {
    m: &'a Model,
    h: usize,
    heads: usize,
    eps: f64,
}

impl Reference<'_> {
    fn w(&self, name: &str) -> &[f64] {
        self.m.params.get(self.m.params.id(name).unwrap_or_else(|| panic!("no parameter {name}"))).data()
    }

    fn linear(&self, x: &[f64], rows: usize, name: &str, out: usize) -> Vec<f64> {
        let w = self.w(&format!("{name}.weight"));
        let b = self.w(&format!("{name}.bias"));
        let inp = x.len() / rows;
        let mut y = kernels::matmul(x, w, rows, inp, out);
        for r in 0..rows {
            for c in 0..out {
                y[r * out + c] += b[c];
            }
        }
        y
    }

    fn norm(&self, x: &[f64], name: &str) -> Vec<f64> {
        kernels::layer_norm(x, self.w(&format!("{name}.gamma")), self.w(&format!("{name}.beta")), self.eps).y
    }

    /// Hidden states after the last layer, `[max_len×h]`.
    fn encode(&self, e: &PretrainExample) -> Vec<f64> {
        let (h, n) = (self.h, e.max_len);
        let (tok, pos, seg) = (self.w("embeddings.token"), self.w("embeddings.position"), self.w("embeddings.segment"));
        let mut x = vec![0.0; n * h];
        for i in 0..n {
            for c in 0..h {
                x[i * h + c] = tok[e.token_ids[i] * h + c] + pos[i * h + c] + seg[e.segment_ids[i] * h + c];
            }
        }
        let mut x = self.norm(&x, "embeddings.norm");
        let dh = h / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let layers = self.m.config().encoder.num_layers;
        let ff = self.m.config().encoder.ff_size;
        for k in 1..=layers {
            let l = |s: &str| format!("layer.{k}.{s}");
            let q = self.linear(&x, n, &l("attention.query"), h);
            let kk = self.linear(&x, n, &l("attention.key"), h);
            let v = self.linear(&x, n, &l("attention.value"), h);
            let mut ctx = vec![0.0; n * h];
            for head in 0..self.heads {
                let cut = |t: &[f64]| kernels::head_slice(t, h, 0, n, head, dh);
                let p = kernels::attention_probs(&cut(&q), &cut(&kk), n, dh, scale, &e.attention_mask);
                let c = kernels::matmul(&p, &cut(&v), n, n, dh);
                for i in 0..n {
                    ctx[i * h + head * dh..i * h + (head + 1) * dh].copy_from_slice(&c[i * dh..(i + 1) * dh]);
                }
            }
            let o = self.linear(&ctx, n, &l("attention.output"), h);
            let res: Vec<f64> = x.iter().zip(&o).map(|(a, b)| a + b).collect();
            let h1 = self.norm(&res, &l("attention.norm"));
            let f: Vec<f64> = self.linear(&h1, n, &l("ffn.input"), ff).into_iter().map(kernels::gelu).collect();
            let f = self.linear(&f, n, &l("ffn.output"), h);
            let res: Vec<f64> = h1.iter().zip(&f).map(|(a, b)| a + b).collect();
            x = self.norm(&res, &l("ffn.norm"));
        }
        x
    }

    /// `(mlm, nsp, total)` with the same row order as the packed batch.
    fn losses(&self, examples: &[PretrainExample]) -> (f64, f64, f64) {
        let h = self.h;
        let vocab = self.m.config().encoder.vocab_size;
        let (mut mlm_sum, mut mlm_n, mut nsp_sum) = (0.0, 0usize, 0.0);
        for e in examples {
            let x = self.encode(e);
            let cls = self.linear(&x[..h], 1, "heads.nsp", 2);
            nsp_sum += kernels::nll(&cls, e.nsp_label.class() as usize);
            for (i, &label) in e.mlm_labels.iter().enumerate() {
                if label == IGNORE {
                    continue;
                }
                let t: Vec<f64> = self.linear(&x[i * h..(i + 1) * h], 1, "heads.mlm.transform", h).into_iter().map(kernels::gelu).collect();
                let t = self.norm(&t, "heads.mlm.norm");
                let mut logits = kernels::matmul(&t, self.w("heads.mlm.decoder.weight"), 1, h, vocab);
                for (l, b) in logits.iter_mut().zip(self.w("heads.mlm.decoder.bias")) {
                    *l += b;
                }
                mlm_sum += kernels::nll(&logits, label as usize);
                mlm_n += 1;
            }
        }
        let mlm = mlm_sum / mlm_n as f64;
        let nsp = nsp_sum / examples.len() as f64;
        (mlm, nsp, mlm + nsp)
    }
}

fn baseline_equivalence() -> Outcome {
    let mut rng = stream(3, "shapes", 0);
    for b in 0..100u64 {
        let (layers, heads) = [(2, 2), (3, 4), (4, 2)][b as usize % 3];
        let enc = encoder(48, layers, 8, heads);
        let m = model(enc, HeadPlacement::top(layers), ConcatMode::None, b);
        let count = rng.random_range(1..=4);
        let max_len = rng.random_range(8..=24);
        let examples = random_examples(100 + b, count, 48, max_len);
        let batch = PretrainBatch::from_examples(&examples).unwrap();
        let mut tape = Tape::new();
        let mut r = stream(0, "eval", 0);
        let got = m.pretrain_forward(&mut tape, &batch, &mut Mode::eval(&mut r)).unwrap().breakdown(&tape);
        let reference = Reference { m: &m, h: 8, heads, eps: m.config().encoder.layer_norm_eps };
        let (mlm, nsp, total) = reference.losses(&examples);
        let same = got.mlm_loss.to_bits() == mlm.to_bits()
            && got.nsp_loss.map(f64::to_bits) == Some(nsp.to_bits())
            && got.total.to_bits() == total.to_bits()
            && got.bigram_loss.is_none();
        ensure!(same, "batch {b}: model ({}, {:?}, {}) vs reference ({mlm}, {nsp}, {total})", got.mlm_loss, got.nsp_loss, got.total);
    }
    Ok("100 random batches bit-identical (mlm, nsp, total)".into())
}

// ---------------------------------------------------------------- 4

fn within(name: &str, hits: usize, n: usize, p: f64) -> Result<String, String> {
    let rate = hits as f64 / n as f64;
    let band = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
    ensure!(n >= 100_000, "{name}: only {n} samples");
    ensure!((rate - p).abs() <= band, "{name}: {rate:.5} outside {p} ± {band:.5} (n={n})");
    Ok(format!("{name} {rate:.4}±{band:.4}"))
}

fn data_statistics() -> Outcome {
    let cfg = PipelineConfig { bigram: BigramConfig { enabled: true, ..BigramConfig::default() }, ..PipelineConfig::default() };
    let mut total = PipelineStats::default();
    let mut chunk = 0u64;
    while total.examples < 100_000 || total.masking.selected < 100_000 || total.bigram_candidates < 100_000 {
        let docs = toy_corpus(2000, 2, 8, &mut stream(chunk, "stats-corpus", 0));
        let vocab = Vocab::build(docs.iter().flatten().map(String::as_str), 1).unwrap();
        let (_, s) = build_pretrain_examples(&docs, &vocab, SHORT_LEN, &cfg, chunk).unwrap();
        ensure!(!s.nsp_imbalanced, "chunk {chunk} could not balance NSP");
        total.examples += s.examples;
        total.is_next += s.is_next;
        total.masking.merge(&s.masking);
        total.bigram_candidates += s.bigram_candidates;
        total.bigram_swaps += s.bigram_swaps;
        chunk += 1;
    }
    let m = total.masking;
    let lines = [
        within("mask rate", m.selected, m.eligible, 0.15)?,
        within("[MASK]", m.to_mask, m.selected, 0.8)?,
        within("random", m.to_random, m.selected, 0.1)?,
        within("kept", m.unchanged, m.selected, 0.1)?,
        within("is-next", total.is_next, total.examples, 0.5)?,
        within("swap", total.bigram_swaps, total.bigram_candidates, 0.15)?,
    ];
    Ok(lines.join(", "))
}

// ---------------------------------------------------------------- 5

fn freeze_correctness() -> Outcome {
    let (vocab, data) = toy_pretrain_data(30, 5, false);
    let mut sizes = Vec::new();
    for nsp in 1..=4 {
        for concat in ConcatMode::ALL {
            let p = HeadPlacement { nsp_layer: nsp, ..HeadPlacement::top(4) };
            let m = model(encoder(vocab.len(), 4, 8, 2), p, concat, nsp as u64);
            let frozen: BTreeSet<ParamId> = apply_freeze(&m).unwrap().into_iter().collect();
            let mut support = BTreeSet::new();
            for b in 0..4 {
                let batch = PretrainBatch::from_examples(&random_examples(b, 4, vocab.len(), 20)).unwrap();
                let g = loss_and_grads(&m, &batch, Loss::Nsp, true).1.unwrap();
                support.extend(m.params.ids().filter(|&id| g.is_nonzero(id)));
            }
            let names = |s: &BTreeSet<ParamId>| s.iter().map(|&id| m.params.name(id).to_string()).collect::<Vec<_>>();
            ensure!(
                frozen == support,
                "nsp_layer {nsp} {}: frozen {:?} vs support {:?}",
                concat.name(),
                names(&frozen.difference(&support).copied().collect()),
                names(&support.difference(&frozen).copied().collect())
            );
            sizes.push(frozen.len());
        }
    }
    for nsp in [1, 3] {
        let p = HeadPlacement { nsp_layer: nsp, ..HeadPlacement::top(4) };
        let m = model(encoder(vocab.len(), 4, 8, 2), p, ConcatMode::ClsEmbedding, 9);
        let frozen = apply_freeze(&m).unwrap();
        let cfg = TrainConfig { lr: 1e-2, batch_size_short: 4, batch_size_long: 2, ..TrainConfig::pretrain(16, 9) };
        let mut t = Pretrainer::new(m, cfg, FreezePolicy::at_step(6)).unwrap();
        let mut snapshot = None;
        while !t.is_done() {
            let rec = t.train_step(&data).unwrap();
            let fp = t.model.params.fingerprint(frozen.iter().copied());
            match (rec.step, snapshot) {
                (6, _) => snapshot = Some(fp),
                (s, Some(before)) if s > 6 => ensure!(fp == before, "nsp_layer {nsp}: frozen checksum changed at step {s}"),
                _ => {}
            }
        }
        ensure!(t.progress().freeze_step == Some(6), "freeze did not fire at step 6");
    }
    Ok(format!("frozen set = NSP gradient support for 12 placements/concat modes ({:?} arrays); checksums constant for 10 steps after the trigger", sizes.iter().collect::<BTreeSet<_>>()))
}

// ---------------------------------------------------------------- 6

fn overfit_sanity() -> Outcome {
    const LAYERS: usize = 4;
    let tiny = |vocab: usize| EncoderConfig { num_layers: LAYERS, num_heads: 2, hidden_size: 32, ff_size: 64, ..EncoderConfig::desk(vocab) };
    let mut summary = Vec::new();
    for variant in [Variant::BertBaseline, Variant::LowerNsp, Variant::LowerMask, Variant::BigramShift, Variant::WithoutNsp] {
        let placement = variant.placement(LAYERS, variant.is_lowered().then_some(2)).unwrap();
        let docs = toy_corpus(12, 3, 5, &mut stream(11, "corpus", 0));
        let vocab = Vocab::build(docs.iter().flatten().map(String::as_str), 1).unwrap();
        let cfg = PipelineConfig {
            bigram: BigramConfig { enabled: placement.bigram_shift_enabled, ..BigramConfig::default() },
            ..PipelineConfig::default()
        };
        let (mut short, _) = build_pretrain_examples(&docs, &vocab, SHORT_LEN, &cfg, 5).unwrap();
        let (mut long, _) = build_pretrain_examples(&docs, &vocab, LONG_LEN, &cfg, 5).unwrap();
        short.truncate(32);
        long.truncate(32);
        ensure!(short.len() == 32, "corpus gave only {} examples", short.len());
        let heads = HeadsConfig { placement, ..HeadsConfig::baseline(LAYERS) };
        let m = Model::init(&ModelConfig { encoder: tiny(vocab.len()), heads, task: None }, 3).unwrap();
        let before = evaluate_pretrain(&m, &short, 32).unwrap().total;
        let train = TrainConfig { lr: 1e-3, batch_size_long: 32, ..TrainConfig::pretrain(500, 3) };
        let mut t = Pretrainer::new(m, train, FreezePolicy::default()).unwrap();
        t.run(&PretrainData { short: short.clone(), long }, |_, _| Ok(())).unwrap();
        let after = evaluate_pretrain(&t.model, &short, 32).unwrap().total;
        let ratio = after / before;
        ensure!(ratio < 0.1, "{}: loss {before:.3} -> {after:.3} (ratio {ratio:.3})", variant.name());
        summary.push(format!("{} {ratio:.3}", variant.name()));
    }

    let records = qa_records(16, 0.0, &mut stream(4, "qa", 0));
    let texts: Vec<String> = records.iter().flat_map(|r| [r.question.clone(), r.context.clone()]).collect();
    let vocab = Vocab::build(texts.iter().map(String::as_str), 1).unwrap();
    let (examples, stats) = build_qa_examples(&records, &vocab, SHORT_LEN).unwrap();
    ensure!(stats.kept == 16, "only {} QA examples kept", stats.kept);
    let m = Model::init(&ModelConfig { encoder: tiny(vocab.len()), heads: HeadsConfig::baseline(LAYERS), task: None }, 8).unwrap();
    let spec = TaskSpec { task: Task::Qa, ft_concat: ConcatMode::None };
    let train = TrainConfig { lr: 1e-3, dropout_p: 0.0, ..TrainConfig::finetune(1000, 8) };
    let mut ft = Finetuner::new(m, spec, train).unwrap();
    ft.run(&FinetuneData::Qa(examples.clone())).unwrap();
    let scores = evaluate_qa(&ft.model, &examples, &SpanDecoder::default()).unwrap();
    ensure!(scores.exact_match == 100.0, "QA training EM {}", scores.exact_match);
    Ok(format!("final/initial loss: {}; QA training EM 100", summary.join(", ")))
}

// ---------------------------------------------------------------- 7

const PIECES: [&str; 16] =
    ["the", "The", "a", "An", "an", "cat", "Cat!", "sat", "on", "mat.", "(dog)", "dog", "x-ray", "xray", "\tthe", "sat,"];

fn oracle_tokens(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        for c in ch.to_lowercase() {
            if c.is_whitespace() {
                if !word.is_empty() {
                    words.push(std::mem::take(&mut word));
                }
            } else if !c.is_ascii_punctuation() {
                word.push(c);
            }
        }
    }
    if !word.is_empty() {
        words.push(word);
    }
    words.retain(|w| w != "a" && w != "an" && w != "the");
    words
}

/// Exact rational F1 from a brute-force bag matching.
fn oracle_f1(pred: &[String], gold: &[String]) -> (usize, usize) {
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() { (1, 1) } else { (0, 1) };
    }
    let mut used = vec![false; gold.len()];
    let mut same = 0;
    for p in pred {
        if let Some(j) = (0..gold.len()).find(|&j| !used[j] && gold[j] == *p) {
            used[j] = true;
            same += 1;
        }
    }
    (2 * same, pred.len() + gold.len())
}

fn oracle_scores(pred: Option<&str>, golds: &[String]) -> (f64, f64) {
    match (pred, golds.is_empty()) {
        (None, true) => (1.0, 1.0),
        (None, false) | (Some(_), true) => (0.0, 0.0),
        (Some(p), false) => {
            let pt = oracle_tokens(p);
            let em = golds.iter().any(|g| oracle_tokens(g) == pt);
            let best = golds
                .iter()
                .map(|g| oracle_f1(&pt, &oracle_tokens(g)))
                .max_by(|a, b| (a.0 * b.1).cmp(&(b.0 * a.1)))
                .unwrap();
            (f64::from(u8::from(em)), best.0 as f64 / best.1 as f64)
        }
    }
}

fn metric_oracles() -> Outcome {
    let mut rng = stream(7, "metric-pairs", 0);
    let phrase = |rng: &mut Stream| -> String {
        let n = rng.random_range(0..6);
        let words: Vec<&str> = (0..n).map(|_| PIECES[rng.random_range(0..PIECES.len())]).collect();
        words.join(if rng.random_bool(0.2) { "  " } else { " " })
    };
    let (mut impossible, mut abstain) = (0, 0);
    for i in 0..1000 {
        let pred = if rng.random_bool(0.15) { None } else { Some(phrase(&mut rng)) };
        let golds: Vec<String> = if rng.random_bool(0.15) { Vec::new() } else { (0..rng.random_range(1..4)).map(|_| phrase(&mut rng)).collect() };
        impossible += usize::from(golds.is_empty());
        abstain += usize::from(pred.is_none());
        let (em, f1) = oracle_scores(pred.as_deref(), &golds);
        let got = (exact_match(pred.as_deref(), &golds), f1_overlap(pred.as_deref(), &golds));
        ensure!(got.0.to_bits() == em.to_bits() && got.1.to_bits() == f1.to_bits(), "pair {i} {pred:?} vs {golds:?}: got {got:?}, oracle ({em}, {f1})");
    }
    Ok(format!("1000 pairs exact ({impossible} unanswerable, {abstain} abstaining)"))
}

// ---------------------------------------------------------------- 8

fn probe_accuracy(variant: Variant, seed: u64) -> Result<f64, String> {
    const LAYERS: usize = 4;
    let docs = toy_corpus(150, 4, 8, &mut stream(seed, "corpus", 0));
    let held_out: Vec<String> = toy_corpus(300, 4, 8, &mut stream(seed, "probe-corpus", 0)).into_iter().flatten().collect();
    let vocab = Vocab::build(docs.iter().flatten().map(String::as_str), 1).unwrap();
    let placement = variant.placement(LAYERS, None).unwrap();
    let cfg = PipelineConfig {
        bigram: BigramConfig { enabled: placement.bigram_shift_enabled, ..BigramConfig::default() },
        ..PipelineConfig::default()
    };
    let (short, _) = build_pretrain_examples(&docs, &vocab, SHORT_LEN, &cfg, seed).unwrap();
    let (long, _) = build_pretrain_examples(&docs, &vocab, LONG_LEN, &cfg, seed).unwrap();
    let enc = EncoderConfig { num_layers: LAYERS, num_heads: 2, hidden_size: 32, ff_size: 64, ..EncoderConfig::desk(vocab.len()) };
    let config = ModelConfig { encoder: enc, heads: HeadsConfig { placement, ..HeadsConfig::baseline(LAYERS) }, task: None };
    let m = Model::init(&config, seed).unwrap();
    let train = TrainConfig { lr: 1e-3, batch_size_long: 32, ..TrainConfig::pretrain(1000, seed) };
    let mut t = Pretrainer::new(m, train, FreezePolicy::default()).unwrap();
    t.run(&PretrainData { short, long }, |_, _| Ok(())).unwrap();
    let dataset = bigram_shift_probe(&held_out, &mut stream(seed, "probe-data", 0)).unwrap();
    let before = t.model.params.fingerprint_all();
    let encoder_before = t.model.params.fingerprint(t.model.encoder.all_params());
    let r = probe_run(&t.model, &vocab, &dataset, &ProbeConfig { seed, ..ProbeConfig::default() }).map_err(|e| e.to_string())?;
    ensure!(t.model.params.fingerprint_all() == before, "probing changed model parameters");
    ensure!(r.encoder_fingerprint == encoder_before, "reported encoder checksum differs");
    Ok(r.best_val_accuracy)
}

fn probe_integrity() -> Outcome {
    let mut lines = Vec::new();
    for seed in 0..3 {
        let with = probe_accuracy(Variant::BigramShift, seed)?;
        let without = probe_accuracy(Variant::BertBaseline, seed)?;
        ensure!(with >= without, "seed {seed}: with bigram shift {with:.3} < without {without:.3}");
        lines.push(format!("seed {seed} {with:.3}>={without:.3}"));
    }
    Ok(format!("encoder checksums unchanged; bigram-shift probe accuracy with vs without: {}", lines.join(", ")))
}

// ---------------------------------------------------------------- 9

fn same_checkpoint(a: &std::path::Path, b: &std::path::Path) -> bool {
    [MANIFEST_FILE, PAYLOAD_FILE, VOCAB_FILE].iter().all(|f| bytes(a, f) == bytes(b, f))
}

fn determinism_and_persistence() -> Outcome {
    let ws = Workspace::new(30);
    let mut checked = 0;
    for (variant, layer, extra) in [
        ("bigram_shift", None, "freeze.enabled=false"),
        ("lower_nsp_freeze", Some(1), "freeze.enabled=true"),
    ] {
        let config = ws.config(variant, layer, &["pretrain.total_steps=12", "pretrain.checkpoint_every=5", extra]);
        let dir = |s: &str| ws.path(&format!("{variant}-{s}"));
        build_data(&config, 3, &dir("data")).map_err(|e| e.to_string())?;
        pretrain(&config, 3, &dir("data"), &dir("a"), None).map_err(|e| e.to_string())?;
        pretrain(&config, 3, &dir("data"), &dir("b"), None).map_err(|e| e.to_string())?;
        ensure!(same_checkpoint(&dir("a"), &dir("b")), "{variant}: same-seed checkpoints differ");
        for at in ["step-000005", "step-000010"] {
            let resumed = dir(&format!("resumed-{at}"));
            pretrain(&config, 3, &dir("data"), &resumed, Some(&dir("a").join(at))).map_err(|e| e.to_string())?;
            ensure!(same_checkpoint(&dir("a"), &resumed), "{variant}: resume from {at} diverges");
            checked += 1;
        }
    }
    Ok(format!("same-seed checkpoints byte-identical; {checked} resumes byte-identical to uninterrupted runs"))
}

// ---------------------------------------------------------------- 10

fn sweep_shape() -> Outcome {
    const LAYERS: usize = 3;
    let ws = Workspace::new(30);
    let all = ["none", "cls_embedding", "nsp_output"];
    let variants = ["bert_baseline", "lower_nsp", "lower_mask", "lower_nsp_freeze", "without_nsp", "bigram_shift"];
    let list = |xs: &[&str]| format!("[{}]", xs.iter().map(|x| format!("\"{x}\"")).collect::<Vec<_>>().join(", "));
    let config = ws.config(
        "bert_baseline",
        None,
        &[
            &format!("encoder.num_layers={LAYERS}"),
            "pretrain.total_steps=2",
            "finetune.total_steps=1",
            &format!("sweep.variants={}", list(&variants)),
            &format!("sweep.pt_concat={}", list(&all)),
            &format!("sweep.ft_concat={}", list(&all)),
        ],
    );
    let s = sweep(&config, &ws.path("sweep")).map_err(|e| e.to_string())?;

    // independent enumeration of the matrix
    type Key = (String, Option<usize>, String, String);
    let mut expected_rows: BTreeMap<Key, usize> = BTreeMap::new();
    let mut expected_rejected = 0;
    for v in variants {
        let layers: Vec<Option<usize>> = if v.starts_with("lower") { (1..LAYERS).map(Some).collect() } else { vec![None] };
        for layer in layers {
            for pt in all {
                for ft in all {
                    if v == "without_nsp" && (pt == "nsp_output" || ft == "nsp_output") {
                        expected_rejected += 1;
                    } else {
                        *expected_rows.entry((v.into(), layer, pt.into(), ft.into())).or_default() += 1;
                    }
                }
            }
        }
    }
    let mut got: BTreeMap<Key, usize> = BTreeMap::new();
    for r in &s.rows {
        let layer = match r.variant.as_str() {
            "lower_mask" => Some(r.mlm_layer),
            "lower_nsp" | "lower_nsp_freeze" => Some(r.nsp_layer),
            _ => None,
        };
        *got.entry((r.variant.clone(), layer, r.pt_concat.clone(), r.ft_concat.clone())).or_default() += 1;
    }
    ensure!(s.rejected.len() == expected_rejected, "rejected {} cells, oracle {expected_rejected}", s.rejected.len());
    ensure!(
        s.rejected.iter().all(|r| r.cell.starts_with("without_nsp/") && r.cell.contains("nsp_output")),
        "unexpected rejection: {:?}",
        s.rejected
    );
    ensure!(got == expected_rows, "row set differs from the oracle");
    Ok(format!("{} rows for {} valid cells, {} rejected", s.rows.len(), expected_rows.len(), s.rejected.len()))
}
