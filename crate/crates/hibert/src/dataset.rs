//! Corpus, record and example files.

use std::fs;
use std::path::Path;

use hibert_core::datapipe::synth::{nli_records, qa_records, toy_corpus};
use hibert_core::datapipe::{
    build_pretrain_examples, format_corpus, parse_corpus, Document, NliRecord, PipelineStats, PretrainExample, QaRecord, Vocab,
    LONG_LEN, SHORT_LEN,
};
use hibert_core::rng::stream;
use hibert_core::train::PretrainData;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{vocab_checksum, write};
use crate::config::ExperimentConfig;
use crate::error::{config_err, data_err, CliError, Result};

pub const DATA_FORMAT: &str = "hibert-examples";
pub const DATA_FORMAT_VERSION: u32 = 1;
pub const DATA_MANIFEST_FILE: &str = "manifest.json";
pub const SHORT_FILE: &str = "pretrain_short.jsonl";
pub const LONG_FILE: &str = "pretrain_long.jsonl";
pub const VOCAB_FILE: &str = "vocab.txt";

/// One line per token, special tokens first.
pub fn write_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    let mut text = vocab.tokens().join("\n");
    text.push('\n');
    write(path, text.as_bytes())
}

pub fn read_vocab(path: &Path) -> Result<Vocab> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    let n = Vocab::SPECIAL_TOKENS.len();
    if lines.len() < n || lines[..n] != Vocab::SPECIAL_TOKENS {
        return Err(data_err(format!("{}: vocabulary must start with {:?}", path.display(), Vocab::SPECIAL_TOKENS)));
    }
    Ok(Vocab::from_tokens(lines[n..].iter().map(|s| s.to_string()))?)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let docs = parse_corpus(&text);
    if docs.is_empty() {
        return Err(data_err(format!("{}: corpus is empty", path.display())));
    }
    Ok(docs)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("records always serialize"));
        out.push('\n');
    }
    write(path, out.as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| data_err(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub file: String,
    pub count: usize,
    pub sha256: String,
}

/// Sidecar of a pre-training example directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub format: String,
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub vocab_size: usize,
    pub vocab_checksum: String,
    pub bigram_enabled: bool,
    pub short: FileEntry,
    pub long: FileEntry,
    pub short_stats: PipelineStats,
    pub long_stats: PipelineStats,
}

/// Vocabulary plus both length pools, as held in memory.
#[derive(Clone, Debug)]
pub struct BuiltData {
    pub vocab: Vocab,
    pub data: PretrainData,
    pub short_stats: PipelineStats,
    pub long_stats: PipelineStats,
}

/// Build the vocabulary and the 128- and 384-token example pools.
pub fn build_examples(config: &ExperimentConfig, docs: &[Document], seed: u64) -> Result<BuiltData> {
    let pipeline = config.pipeline_config()?;
    let vocab = Vocab::build(docs.iter().flatten().map(String::as_str), pipeline.min_freq)?;
    let (short, short_stats) = build_pretrain_examples(docs, &vocab, SHORT_LEN, &pipeline, seed)?;
    let (long, long_stats) = build_pretrain_examples(docs, &vocab, LONG_LEN, &pipeline, seed)?;
    Ok(BuiltData { vocab, data: PretrainData { short, long }, short_stats, long_stats })
}

fn corpus_path(config: &ExperimentConfig) -> Result<&Path> {
    config.data.corpus.as_deref().ok_or_else(|| config_err("data.corpus is not set"))
}

/// `build-data`: write the example pools, vocabulary and manifest to `out`.
pub fn build_data(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<DataManifest> {
    let docs = read_corpus(corpus_path(config)?)?;
    let built = build_examples(config, &docs, seed)?;
    write_data(config, seed, &built, out)
}

pub fn write_data(config: &ExperimentConfig, seed: u64, built: &BuiltData, out: &Path) -> Result<DataManifest> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let entry = |file: &str, items: &[PretrainExample]| -> Result<FileEntry> {
        let path = out.join(file);
        write_jsonl(&path, items)?;
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(FileEntry { file: file.to_string(), count: items.len(), sha256: hex::encode(Sha256::digest(&bytes)) })
    };
    let manifest = DataManifest {
        format: DATA_FORMAT.to_string(),
        format_version: DATA_FORMAT_VERSION,
        config_hash: config.for_seed(seed).hash(),
        seed,
        vocab_size: built.vocab.len(),
        vocab_checksum: vocab_checksum(&built.vocab),
        bigram_enabled: config.pipeline_config()?.bigram.enabled,
        short: entry(SHORT_FILE, &built.data.short)?,
        long: entry(LONG_FILE, &built.data.long)?,
        short_stats: built.short_stats,
        long_stats: built.long_stats,
    };
    write_vocab(&out.join(VOCAB_FILE), &built.vocab)?;
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest always serializes");
    json.push('\n');
    write(&out.join(DATA_MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

/// Read an example directory, verifying file checksums and the vocabulary.
pub fn load_data(dir: &Path) -> Result<(DataManifest, BuiltData)> {
    let path = dir.join(DATA_MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let manifest: DataManifest = serde_json::from_str(&text).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    if manifest.format != DATA_FORMAT || manifest.format_version != DATA_FORMAT_VERSION {
        return Err(data_err(format!("{}: unsupported example format {} v{}", path.display(), manifest.format, manifest.format_version)));
    }
    let load = |entry: &FileEntry| -> Result<Vec<PretrainExample>> {
        let p = dir.join(&entry.file);
        let bytes = fs::read(&p).map_err(|e| CliError::io(&p, e))?;
        if hex::encode(Sha256::digest(&bytes)) != entry.sha256 {
            return Err(data_err(format!("{}: checksum mismatch", p.display())));
        }
        let items: Vec<PretrainExample> = read_jsonl(&p)?;
        if items.len() != entry.count {
            return Err(data_err(format!("{}: {} examples, manifest says {}", p.display(), items.len(), entry.count)));
        }
        Ok(items)
    };
    let short = load(&manifest.short)?;
    let long = load(&manifest.long)?;
    let vocab = read_vocab(&dir.join(VOCAB_FILE))?;
    if vocab_checksum(&vocab) != manifest.vocab_checksum {
        return Err(data_err(format!("{}: vocabulary checksum mismatch", dir.display())));
    }
    let built = BuiltData { vocab, data: PretrainData { short, long }, short_stats: manifest.short_stats, long_stats: manifest.long_stats };
    Ok((manifest, built))
}

/// Sizes for the `synth` command.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSizes {
    pub documents: usize,
    pub qa_train: usize,
    pub qa_eval: usize,
    pub nli_train: usize,
    pub nli_eval: usize,
    pub impossible_fraction: f64,
}

impl Default for SynthSizes {
    fn default() -> Self {
        Self { documents: 200, qa_train: 64, qa_eval: 32, nli_train: 64, nli_eval: 32, impossible_fraction: 0.2 }
    }
}

/// File names written by [`write_synthetic`].
pub const SYNTH_FILES: [&str; 5] = ["corpus.txt", "qa_train.jsonl", "qa_eval.jsonl", "nli_train.jsonl", "nli_eval.jsonl"];

/// Toy corpus and QA/NLI records generated from `seed`.
pub fn write_synthetic(out: &Path, sizes: SynthSizes, seed: u64) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let docs = toy_corpus(sizes.documents, 3, 8, &mut stream(seed, "synth.corpus", 0));
    write(&out.join(SYNTH_FILES[0]), format_corpus(&docs).as_bytes())?;
    let qa: Vec<QaRecord> = qa_records(sizes.qa_train + sizes.qa_eval, sizes.impossible_fraction, &mut stream(seed, "synth.qa", 0));
    write_jsonl(&out.join(SYNTH_FILES[1]), &qa[..sizes.qa_train])?;
    write_jsonl(&out.join(SYNTH_FILES[2]), &qa[sizes.qa_train..])?;
    let nli: Vec<NliRecord> = nli_records(sizes.nli_train + sizes.nli_eval, &mut stream(seed, "synth.nli", 0));
    write_jsonl(&out.join(SYNTH_FILES[3]), &nli[..sizes.nli_train])?;
    write_jsonl(&out.join(SYNTH_FILES[4]), &nli[sizes.nli_train..])?;
    Ok(())
}
