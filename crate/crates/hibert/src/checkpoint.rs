//! Checkpoint directories: `manifest.json`, `params.bin`, `vocab.txt`.
//!
//! `params.bin` starts with a 16-byte header (magic, format version, array
//! count, all little-endian) followed by the arrays listed in the manifest,
//! each a run of little-endian f64 values. Every array carries a SHA-256 of
//! its bytes.

use std::fs;
use std::path::Path;

use hibert_core::datapipe::Vocab;
use hibert_core::experiment::Variant;
use hibert_core::model::{Model, ModelConfig};
use hibert_core::tensor::{Params, Tensor};
use hibert_core::train::{AdamConfig, AdamSlot, AdamState, FreezePolicy, Phase, Progress, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{read_vocab, write_vocab};
use crate::error::{checkpoint_err, CliError, Result};

pub const FORMAT: &str = "hibert-checkpoint";
pub const FORMAT_VERSION: u32 = 1;
pub const MAGIC: [u8; 8] = *b"HIBERTCK";
pub const HEADER_BYTES: usize = 16;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "params.bin";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrayKind {
    Param,
    AdamM,
    AdamV,
    AdamVhat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub kind: ArrayKind,
    pub shape: Vec<usize>,
    /// Byte offset from the start of `params.bin`.
    pub offset: u64,
    /// Number of f64 values.
    pub len: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub variant: Variant,
    pub phase: Phase,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub freeze: FreezePolicy,
    pub progress: Progress,
    pub adam: AdamConfig,
    /// Adam step counter per parameter, in parameter order.
    pub adam_steps: Vec<u64>,
    pub vocab_size: usize,
    pub vocab_checksum: String,
    pub payload_bytes: u64,
    pub arrays: Vec<ArrayEntry>,
}

/// Everything needed to evaluate a model or continue training it bit-exactly.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config_hash: String,
    pub seed: u64,
    pub variant: Variant,
    pub phase: Phase,
    pub model: Model,
    pub adam: AdamState,
    pub train: TrainConfig,
    pub freeze: FreezePolicy,
    pub progress: Progress,
    pub vocab: Vocab,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn vocab_checksum(vocab: &Vocab) -> String {
    format!("{:016x}", vocab.checksum())
}

fn encode_f64(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn decode_f64(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect()
}

impl Checkpoint {
    fn payload(&self) -> (Vec<u8>, Vec<ArrayEntry>) {
        let mut arrays = Vec::new();
        let mut body = Vec::new();
        let mut push = |name: &str, kind: ArrayKind, shape: &[usize], values: &[f64], body: &mut Vec<u8>| {
            let offset = (HEADER_BYTES + body.len()) as u64;
            let start = body.len();
            encode_f64(body, values);
            arrays.push(ArrayEntry {
                name: name.to_string(),
                kind,
                shape: shape.to_vec(),
                offset,
                len: values.len() as u64,
                sha256: sha256_hex(&body[start..]),
            });
        };
        for (id, name, t) in self.model.params.iter() {
            let slot = self.adam.slot(id);
            push(name, ArrayKind::Param, t.shape(), t.data(), &mut body);
            push(name, ArrayKind::AdamM, t.shape(), &slot.m, &mut body);
            push(name, ArrayKind::AdamV, t.shape(), &slot.v, &mut body);
            push(name, ArrayKind::AdamVhat, t.shape(), &slot.vhat, &mut body);
        }
        let mut bytes = Vec::with_capacity(HEADER_BYTES + body.len());
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&body);
        (bytes, arrays)
    }

    pub fn manifest(&self) -> Manifest {
        let (bytes, arrays) = self.payload();
        self.manifest_for(bytes.len(), arrays)
    }

    fn manifest_for(&self, payload_bytes: usize, arrays: Vec<ArrayEntry>) -> Manifest {
        Manifest {
            format: FORMAT.to_string(),
            format_version: FORMAT_VERSION,
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            variant: self.variant,
            phase: self.phase,
            model: self.model.config().clone(),
            train: self.train.clone(),
            freeze: self.freeze,
            progress: self.progress,
            adam: self.adam.config,
            adam_steps: self.adam.slots.iter().map(|s| s.t).collect(),
            vocab_size: self.vocab.len(),
            vocab_checksum: vocab_checksum(&self.vocab),
            payload_bytes: payload_bytes as u64,
            arrays,
        }
    }

    /// Write the three files into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        if self.adam.slots.len() != self.model.params.len() {
            return Err(checkpoint_err("optimizer state does not cover the parameter store"));
        }
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let (bytes, arrays) = self.payload();
        let manifest = self.manifest_for(bytes.len(), arrays);
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest always serializes");
        json.push('\n');
        write(&dir.join(PAYLOAD_FILE), &bytes)?;
        write_vocab(&dir.join(VOCAB_FILE), &self.vocab)?;
        write(&dir.join(MANIFEST_FILE), json.as_bytes())
    }

    /// Read and verify a checkpoint directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        let path = dir.join(PAYLOAD_FILE);
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        if bytes.len() as u64 != manifest.payload_bytes {
            return Err(checkpoint_err(format!("{PAYLOAD_FILE} holds {} bytes, manifest says {}", bytes.len(), manifest.payload_bytes)));
        }
        if bytes.len() < HEADER_BYTES || bytes[..8] != MAGIC {
            return Err(checkpoint_err(format!("{PAYLOAD_FILE} lacks the checkpoint magic")));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(checkpoint_err(format!("{PAYLOAD_FILE} has format version {version}, expected {FORMAT_VERSION}")));
        }
        let count = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        if count != manifest.arrays.len() || count % 4 != 0 {
            return Err(checkpoint_err(format!("{PAYLOAD_FILE} declares {count} arrays, manifest lists {}", manifest.arrays.len())));
        }
        let mut decoded = Vec::with_capacity(count);
        for a in &manifest.arrays {
            let start = a.offset as usize;
            let end = a.len.checked_mul(8).and_then(|n| start.checked_add(n as usize)).filter(|&e| e <= bytes.len());
            let end = end.ok_or_else(|| checkpoint_err(format!("array `{}` ({:?}) runs past the payload", a.name, a.kind)))?;
            let raw = &bytes[start..end];
            if sha256_hex(raw) != a.sha256 {
                return Err(checkpoint_err(format!("checksum mismatch in array `{}` ({:?})", a.name, a.kind)));
            }
            if a.shape.iter().product::<usize>() as u64 != a.len {
                return Err(checkpoint_err(format!("array `{}` shape {:?} does not match its length {}", a.name, a.shape, a.len)));
            }
            decoded.push(decode_f64(raw));
        }
        let mut params = Params::new();
        let mut slots = Vec::with_capacity(count / 4);
        let mut values = decoded.into_iter();
        for (group, &t) in manifest.arrays.chunks_exact(4).zip(&manifest.adam_steps) {
            let kinds: Vec<ArrayKind> = group.iter().map(|a| a.kind).collect();
            if kinds != [ArrayKind::Param, ArrayKind::AdamM, ArrayKind::AdamV, ArrayKind::AdamVhat] || group.iter().any(|a| a.name != group[0].name) {
                return Err(checkpoint_err(format!("arrays for `{}` are out of order", group[0].name)));
            }
            let mut next = || values.next().expect("one decoded array per entry");
            let value = Tensor::new(group[0].shape.clone(), next())?;
            params.insert(&group[0].name, value)?;
            slots.push(AdamSlot { m: next(), v: next(), vhat: next(), t });
        }
        if slots.len() != manifest.adam_steps.len() {
            return Err(checkpoint_err("adam_steps does not list one counter per parameter"));
        }
        let model = Model::bind(&manifest.model, params)?;
        let vocab = read_vocab(&dir.join(VOCAB_FILE))?;
        if vocab_checksum(&vocab) != manifest.vocab_checksum || vocab.len() != manifest.vocab_size {
            return Err(checkpoint_err(format!("{VOCAB_FILE} does not match the manifest's vocabulary checksum")));
        }
        Ok(Self {
            config_hash: manifest.config_hash,
            seed: manifest.seed,
            variant: manifest.variant,
            phase: manifest.phase,
            model,
            adam: AdamState { config: manifest.adam, slots },
            train: manifest.train,
            freeze: manifest.freeze,
            progress: manifest.progress,
            vocab,
        })
    }
}

/// Read only the manifest, checking the format tag and version.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let head: serde_json::Value = serde_json::from_str(&text).map_err(|e| checkpoint_err(format!("{}: {e}", path.display())))?;
    if head.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
        return Err(checkpoint_err(format!("{} is not a checkpoint manifest", path.display())));
    }
    let version = head.get("format_version").and_then(|v| v.as_u64());
    if version != Some(u64::from(FORMAT_VERSION)) {
        return Err(checkpoint_err(format!("checkpoint format version {version:?} is not supported (expected {FORMAT_VERSION})")));
    }
    serde_json::from_value(head).map_err(|e| checkpoint_err(format!("{}: {e}", path.display())))
}

/// Copy a checkpoint directory file by file.
pub fn copy_checkpoint(from: &Path, to: &Path) -> Result<()> {
    fs::create_dir_all(to).map_err(|e| CliError::io(to, e))?;
    for f in [MANIFEST_FILE, PAYLOAD_FILE, VOCAB_FILE] {
        fs::copy(from.join(f), to.join(f)).map_err(|e| CliError::io(&from.join(f), e))?;
    }
    Ok(())
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
