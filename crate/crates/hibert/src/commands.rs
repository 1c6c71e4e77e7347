//! What each subcommand does, independent of argument parsing.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use hibert_core::datapipe::{build_nli_examples, build_qa_examples, NliRecord, QaRecord, Vocab};
use hibert_core::eval::{
    bigram_shift_probe, evaluate_nli, evaluate_qa, probe_run, sentence_length_probe, synthetic_probe_datasets, word_content_probe,
    ReportRow,
};
use hibert_core::experiment::{matrix, Cell};
use hibert_core::model::{Model, Task};
use hibert_core::rng::stream;
use hibert_core::train::{FinetuneData, Finetuner, Phase, Pretrainer};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checkpoint::{copy_checkpoint, read_manifest, Checkpoint, MANIFEST_FILE, PAYLOAD_FILE, VOCAB_FILE};
use crate::config::ExperimentConfig;
use crate::dataset::{build_examples, load_data, read_corpus, read_jsonl, write_jsonl, BuiltData};
use crate::error::{config_err, data_err, CliError, Result};
use crate::report::{append_rows, read_rows, JSONL_FILE};

pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Serialize)]
struct MetricsLine<'a, R: Serialize> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    record: &'a R,
}

struct MetricsLog {
    file: fs::File,
    path: PathBuf,
}

impl MetricsLog {
    fn open(dir: &Path, append: bool) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(METRICS_FILE);
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(&path)
            .map_err(|e| CliError::io(&path, e))?;
        Ok(Self { file, path })
    }

    fn write<R: Serialize>(&mut self, config_hash: &str, seed: u64, record: &R) -> Result<()> {
        let mut line = serde_json::to_string(&MetricsLine { config_hash, seed, record }).expect("records always serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| CliError::io(&self.path, e))
    }
}

/// Pre-train on in-memory data and save the final checkpoint to `out`.
/// With `resume`, training continues from that checkpoint instead.
pub fn pretrain_with(config: &ExperimentConfig, seed: u64, built: &BuiltData, out: &Path, resume: Option<Checkpoint>) -> Result<Checkpoint> {
    let run = config.for_seed(seed);
    let hash = run.hash();
    let mut trainer = match resume {
        Some(ck) => {
            if ck.phase != Phase::Pretrain {
                return Err(config_err("only pre-training checkpoints can resume pre-training"));
            }
            if ck.config_hash != hash {
                return Err(config_err(format!("checkpoint was written under config hash {}, this run is {hash}", ck.config_hash)));
            }
            if ck.vocab != built.vocab {
                return Err(data_err("checkpoint vocabulary differs from the example data"));
            }
            Pretrainer::resume(ck.model, ck.adam, ck.train, ck.freeze, ck.progress)?
        }
        None => {
            let model = Model::init(&run.model_config(built.vocab.len())?, seed)?;
            Pretrainer::new(model, run.pretrain_config(seed), run.freeze)?
        }
    };
    let mut log = MetricsLog::open(out, trainer.progress().step > 0)?;
    let snapshot = |t: &Pretrainer| Checkpoint {
        config_hash: hash.clone(),
        seed,
        variant: run.variant,
        phase: Phase::Pretrain,
        model: t.model.clone(),
        adam: t.adam.clone(),
        train: t.config().clone(),
        freeze: *t.freeze_policy(),
        progress: t.progress(),
        vocab: built.vocab.clone(),
    };
    let every = run.pretrain.checkpoint_every;
    while !trainer.is_done() {
        let rec = trainer.train_step(&built.data)?;
        log.write(&hash, seed, &rec)?;
        if every > 0 && rec.step % every == 0 && !trainer.is_done() {
            snapshot(&trainer).save(&out.join(format!("step-{:06}", rec.step)))?;
        }
    }
    let ck = snapshot(&trainer);
    ck.save(out)?;
    Ok(ck)
}

/// `pretrain`: read an example directory written by `build-data`.
pub fn pretrain(config: &ExperimentConfig, seed: u64, data_dir: &Path, out: &Path, resume: Option<&Path>) -> Result<Checkpoint> {
    let (manifest, built) = load_data(data_dir)?;
    let wanted = config.pipeline_config()?.bigram.enabled;
    if manifest.bigram_enabled != wanted {
        return Err(config_err(format!(
            "variant {} needs bigram_enabled = {wanted}, but {} was built with {}",
            config.variant.name(),
            data_dir.display(),
            manifest.bigram_enabled
        )));
    }
    let resume = resume.map(Checkpoint::load).transpose()?;
    pretrain_with(config, seed, &built, out, resume)
}

fn records_path(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    path.clone().ok_or_else(|| config_err(format!("data.{key} is not set")))
}

fn finetune_data(config: &ExperimentConfig, vocab: &Vocab, task: Task, eval: bool) -> Result<FinetuneData> {
    let d = &config.data;
    let max_len = config.finetune.max_len;
    Ok(match task {
        Task::Qa => {
            let path = match (eval, &d.qa_eval) {
                (true, Some(p)) => p.clone(),
                _ => records_path(&d.qa_train, "qa_train")?,
            };
            let records: Vec<QaRecord> = read_jsonl(&path)?;
            let (examples, stats) = build_qa_examples(&records, vocab, max_len)?;
            if examples.is_empty() {
                return Err(data_err(format!("{}: no usable QA examples ({stats:?})", path.display())));
            }
            FinetuneData::Qa(examples)
        }
        Task::Nli => {
            let path = match (eval, &d.nli_eval) {
                (true, Some(p)) => p.clone(),
                _ => records_path(&d.nli_train, "nli_train")?,
            };
            let records: Vec<NliRecord> = read_jsonl(&path)?;
            let examples = build_nli_examples(&records, vocab, max_len)?;
            if examples.is_empty() {
                return Err(data_err(format!("{}: no NLI records", path.display())));
            }
            FinetuneData::Nli(examples)
        }
    })
}

/// `finetune`: attach the configured task head to a pre-trained checkpoint,
/// or continue a fine-tuning checkpoint. The task request is checked against
/// the checkpoint's heads before any parameters are read.
pub fn finetune(config: &ExperimentConfig, seed: u64, checkpoint: &Path, out: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(checkpoint)?;
    let spec = config.task_spec();
    spec.validate(&manifest.model.heads)
        .map_err(|e| config_err(format!("checkpoint {} ({}): {e}", checkpoint.display(), manifest.variant.name())))?;
    if manifest.phase == Phase::Finetune && manifest.model.task != Some(spec) {
        return Err(config_err("checkpoint was fine-tuned for a different task or concat mode"));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let data = finetune_data(config, &ck.vocab, spec.task, false)?;
    let run = config.for_seed(seed);
    let hash = run.hash();
    let mut tuner = match ck.phase {
        Phase::Finetune => {
            if ck.config_hash != hash {
                return Err(config_err(format!("checkpoint was written under config hash {}, this run is {hash}", ck.config_hash)));
            }
            Finetuner::resume(ck.model, ck.adam, ck.train, ck.progress)?
        }
        _ => Finetuner::new(ck.model, spec, run.finetune_config(seed))?,
    };
    let mut log = MetricsLog::open(out, tuner.progress().step > 0)?;
    while !tuner.is_done() {
        let rec = tuner.train_step(&data)?;
        log.write(&hash, seed, &rec)?;
    }
    let done = Checkpoint {
        config_hash: hash,
        seed,
        variant: ck.variant,
        phase: Phase::Finetune,
        model: tuner.model.clone(),
        adam: tuner.adam.clone(),
        train: tuner.config().clone(),
        freeze: ck.freeze,
        progress: tuner.progress(),
        vocab: ck.vocab,
    };
    done.save(out)?;
    Ok(done)
}

fn row(ck: &Checkpoint, task: &str, metric: &str, value: f64) -> ReportRow {
    let c = ck.model.config();
    ReportRow {
        variant: ck.variant.name().to_string(),
        mlm_layer: c.heads.placement.mlm_layer,
        nsp_layer: c.heads.placement.nsp_layer,
        pt_concat: c.heads.concat.name().to_string(),
        ft_concat: c.task.map_or("none", |t| t.ft_concat.name()).to_string(),
        task: task.to_string(),
        metric: metric.to_string(),
        value,
        seed: ck.seed,
        config_hash: ck.config_hash.clone(),
    }
}

/// Downstream scores of a fine-tuned checkpoint: EM and F1 for QA,
/// accuracy for NLI.
pub fn evaluate_checkpoint(config: &ExperimentConfig, ck: &Checkpoint) -> Result<Vec<ReportRow>> {
    let spec = ck.model.config().task.ok_or_else(|| config_err("checkpoint has no task head; fine-tune it first"))?;
    Ok(match finetune_data(config, &ck.vocab, spec.task, true)? {
        FinetuneData::Qa(ex) => {
            let s = evaluate_qa(&ck.model, &ex, &config.span_decoder())?;
            vec![row(ck, "qa", "exact_match", s.exact_match), row(ck, "qa", "f1", s.f1)]
        }
        FinetuneData::Nli(ex) => vec![row(ck, "nli", "accuracy", evaluate_nli(&ck.model, &ex)?)],
    })
}

/// `eval`: score a fine-tuned checkpoint and append to the report in `report_dir`.
pub fn eval(config: &ExperimentConfig, checkpoint: &Path, report_dir: &Path) -> Result<Vec<ReportRow>> {
    let ck = Checkpoint::load(checkpoint)?;
    let rows = evaluate_checkpoint(config, &ck)?;
    append_rows(report_dir, &rows)?;
    Ok(rows)
}

fn probe_sentences(config: &ExperimentConfig) -> Result<Vec<String>> {
    let path = config
        .data
        .probe_corpus
        .as_ref()
        .or(config.data.corpus.as_ref())
        .ok_or_else(|| config_err("neither data.probe_corpus nor data.corpus is set"))?;
    Ok(read_corpus(path)?.into_iter().flatten().collect())
}

/// `probe`: the three synthetic probing tasks on a frozen checkpoint.
pub fn probe(config: &ExperimentConfig, checkpoint: &Path, report_dir: &Path) -> Result<Vec<ReportRow>> {
    let ck = Checkpoint::load(checkpoint)?;
    let sentences = probe_sentences(config)?;
    let mut rng = stream(ck.seed, "probe.data", 0);
    let datasets = if config.probe.length_classes == 3 && config.probe.content_words == 4 {
        synthetic_probe_datasets(&sentences, &mut rng)?
    } else {
        vec![
            sentence_length_probe(&sentences, config.probe.length_classes, &mut rng)?,
            word_content_probe(&sentences, config.probe.content_words, &mut rng)?,
            bigram_shift_probe(&sentences, &mut rng)?,
        ]
    };
    let cfg = config.probe_config(ck.seed);
    let mut rows = Vec::new();
    for d in &datasets {
        let r = probe_run(&ck.model, &ck.vocab, d, &cfg)?;
        rows.push(row(&ck, &format!("probe.{}", r.dataset), "accuracy", r.best_val_accuracy));
        rows.push(row(&ck, &format!("probe.{}", r.dataset), "majority_rate", r.majority_rate));
    }
    append_rows(report_dir, &rows)?;
    Ok(rows)
}

/// A cell the sweep refused, with the reason.
#[derive(Clone, Debug, Serialize)]
pub struct Rejection {
    pub cell: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct SweepSummary {
    pub rows: Vec<ReportRow>,
    pub rejected: Vec<Rejection>,
    /// Cells whose row was already present in the report.
    pub skipped: usize,
}

/// Report metric of a sweep cell: F1 for QA, accuracy for NLI.
pub fn sweep_metric(task: Task) -> &'static str {
    match task {
        Task::Qa => "f1",
        Task::Nli => "accuracy",
    }
}

fn sha256_of_dir(dir: &Path) -> Result<Vec<u8>> {
    let mut h = Sha256::new();
    for f in [MANIFEST_FILE, PAYLOAD_FILE, VOCAB_FILE] {
        let p = dir.join(f);
        h.update(fs::read(&p).map_err(|e| CliError::io(&p, e))?);
    }
    Ok(h.finalize().to_vec())
}

/// `sweep`: variants × placements × PT concat × FT concat × seeds.
/// Inconsistent cells are listed in `rejected.jsonl`; every valid cell is
/// pre-trained (shared across FT concat modes), fine-tuned from its own copy
/// of the pre-trained checkpoint, evaluated, and reported as one row.
pub fn sweep(config: &ExperimentConfig, out: &Path) -> Result<SweepSummary> {
    let task = config.finetune.task;
    let cells = matrix(
        &config.sweep_variants(),
        config.encoder.num_layers,
        &config.sweep_pt_concat(),
        &config.sweep_ft_concat(),
        task,
        &config.seeds,
    );
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut summary = SweepSummary::default();
    let mut valid: Vec<Cell> = Vec::new();
    for (cell, verdict) in cells {
        match verdict {
            Ok(()) => valid.push(cell),
            Err(e) => summary.rejected.push(Rejection { cell: cell.label(), reason: e.to_string() }),
        }
    }
    write_jsonl(&out.join("rejected.jsonl"), &summary.rejected)?;

    let done: Vec<String> = if out.join(JSONL_FILE).exists() {
        read_rows(out)?.into_iter().map(|r| r.config_hash).collect()
    } else {
        Vec::new()
    };
    let docs = read_corpus(config.data.corpus.as_deref().ok_or_else(|| config_err("data.corpus is not set"))?)?;
    let mut data_cache: BTreeMap<String, BuiltData> = BTreeMap::new();
    let mut pretrained: BTreeMap<String, PathBuf> = BTreeMap::new();
    for cell in &valid {
        let cell_config = config.for_cell(cell);
        let hash = cell_config.hash();
        if done.contains(&hash) {
            summary.skipped += 1;
            continue;
        }
        // cells differing only in fine-tuning share one pre-training run
        let pt_config = ExperimentConfig { finetune: config.finetune.clone(), ..cell_config.clone() };
        let pt_hash = pt_config.hash();
        let pt_dir = out.join("pretrain").join(&pt_hash[..16]);
        if !pretrained.contains_key(&pt_hash) {
            let key = serde_json::to_string(&pt_config.pipeline_config()?).expect("pipeline config serializes");
            if !data_cache.contains_key(&key) {
                data_cache.insert(key.clone(), build_examples(&pt_config, &docs, cell.seed)?);
            }
            if !pt_dir.join(MANIFEST_FILE).exists() {
                pretrain_with(&pt_config, cell.seed, &data_cache[&key], &pt_dir, None)?;
            }
            pretrained.insert(pt_hash.clone(), pt_dir.clone());
        }
        let before = sha256_of_dir(&pt_dir)?;
        let cell_dir = out.join("cells").join(&hash[..16]);
        let copy = cell_dir.join("pretrained");
        copy_checkpoint(&pt_dir, &copy)?;
        let tuned = finetune(&cell_config, cell.seed, &copy, &cell_dir.join("finetuned"))?;
        if sha256_of_dir(&pt_dir)? != before {
            return Err(hibert_core::Error::Integrity(format!("shared checkpoint {} changed during cell {}", pt_dir.display(), cell.label())).into());
        }
        let metric = sweep_metric(task);
        let r = evaluate_checkpoint(&cell_config, &tuned)?
            .into_iter()
            .find(|r| r.metric == metric)
            .ok_or_else(|| data_err(format!("no {metric} for cell {}", cell.label())))?;
        fs::write(cell_dir.join("cell.json"), serde_json::to_string_pretty(cell).expect("cell serializes") + "\n")
            .map_err(|e| CliError::io(&cell_dir, e))?;
        append_rows(out, std::slice::from_ref(&r))?;
        summary.rows.push(r);
    }
    Ok(summary)
}
