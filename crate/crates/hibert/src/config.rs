//! Experiment configuration: one TOML file plus `--set key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use hibert_core::datapipe::{BigramConfig, MaskingConfig, PipelineConfig, SwapGranularity, LONG_LEN};
use hibert_core::encoder::EncoderConfig;
use hibert_core::eval::{ProbeConfig, SpanDecoder};
use hibert_core::experiment::{Cell, Variant};
use hibert_core::heads::{ConcatMode, HeadPlacement, HeadsConfig, LossWeights, NspConcatRepr};
use hibert_core::model::{ModelConfig, Task, TaskSpec};
use hibert_core::train::{AdamConfig, FreezePolicy, Phase, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    /// Layer of the lowered head; required by the lower_* variants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub heads: HeadsSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub freeze: FreezePolicy,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Encoder geometry; the vocabulary size comes from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_size: usize,
    pub ff_size: usize,
    pub max_position: usize,
    pub type_vocab: usize,
    pub layer_norm_eps: f64,
    pub init_std: f64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = EncoderConfig::desk(1);
        Self {
            num_layers: d.num_layers,
            num_heads: d.num_heads,
            hidden_size: d.hidden_size,
            ff_size: d.ff_size,
            max_position: d.max_position,
            type_vocab: d.type_vocab,
            layer_norm_eps: d.layer_norm_eps,
            init_std: d.init_std,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadsSection {
    pub pt_concat: ConcatMode,
    pub nsp_repr: NspConcatRepr,
    pub tie_weights: bool,
    pub loss_weights: LossWeights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size_short: usize,
    pub batch_size_long: usize,
    pub dropout_p: f64,
    pub total_steps: usize,
    pub checkpoint_every: usize,
    pub adam: AdamConfig,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let t = TrainConfig::pretrain(1000, 0);
        Self {
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size_short: t.batch_size_short,
            batch_size_long: t.batch_size_long,
            dropout_p: t.dropout_p,
            total_steps: t.total_steps,
            checkpoint_every: 0,
            adam: t.adam,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub task: Task,
    pub ft_concat: ConcatMode,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub dropout_p: f64,
    pub total_steps: usize,
    pub max_len: usize,
    pub max_answer_len: usize,
    pub null_threshold: f64,
    pub adam: AdamConfig,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let t = TrainConfig::finetune(1000, 0);
        let d = SpanDecoder::default();
        Self {
            task: Task::Qa,
            ft_concat: ConcatMode::None,
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size_short,
            dropout_p: t.dropout_p,
            total_steps: t.total_steps,
            max_len: 128,
            max_answer_len: d.max_answer_len,
            null_threshold: d.null_threshold,
            adam: t.adam,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub length_classes: usize,
    pub content_words: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let p = ProbeConfig::default();
        Self {
            hidden: p.hidden,
            lr: p.lr,
            weight_decay: p.weight_decay,
            batch_size: p.batch_size,
            epochs: p.epochs,
            length_classes: 3,
            content_words: 4,
        }
    }
}

/// Input files. Relative paths resolve against the working directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Plain-text corpus: one sentence per line, blank lines between documents.
    pub corpus: Option<PathBuf>,
    pub qa_train: Option<PathBuf>,
    pub qa_eval: Option<PathBuf>,
    pub nli_train: Option<PathBuf>,
    pub nli_eval: Option<PathBuf>,
    /// Sentences for the probing tasks; the corpus when absent.
    pub probe_corpus: Option<PathBuf>,
    pub min_freq: usize,
    pub masking: MaskingConfig,
    pub bigram_rate: f64,
    pub bigram_granularity: SwapGranularity,
}

impl Default for DataSection {
    fn default() -> Self {
        let b = BigramConfig::default();
        Self {
            corpus: None,
            qa_train: None,
            qa_eval: None,
            nli_train: None,
            nli_eval: None,
            probe_corpus: None,
            min_freq: 1,
            masking: MaskingConfig::default(),
            bigram_rate: b.rate,
            bigram_granularity: b.granularity,
        }
    }
}

/// Matrix swept by the `sweep` command; empty lists fall back to the
/// top-level choice.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub variants: Vec<Variant>,
    pub pt_concat: Vec<ConcatMode>,
    pub ft_concat: Vec<ConcatMode>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| config_err(format!("invalid TOML: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: Self = table.try_into().map_err(|e| config_err(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    /// Compact JSON with fields in declaration order; the hash input.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("configuration always serializes")
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// The configuration of a single-seed run; artifacts embed its hash.
    pub fn for_seed(&self, seed: u64) -> Self {
        Self { seeds: vec![seed], ..self.clone() }
    }

    /// The configuration one sweep cell runs with.
    pub fn for_cell(&self, cell: &Cell) -> Self {
        let layer = match cell.variant {
            Variant::LowerMask => Some(cell.placement.mlm_layer),
            v if v.is_lowered() => Some(cell.placement.nsp_layer),
            _ => None,
        };
        let mut c = self.for_seed(cell.seed);
        c.variant = cell.variant;
        c.layer = layer;
        c.heads.pt_concat = cell.pt_concat;
        c.finetune.ft_concat = cell.ft_concat;
        c.finetune.task = cell.task;
        c.freeze.enabled = cell.variant == Variant::LowerNspFreeze;
        c.sweep = SweepSection::default();
        c
    }

    pub fn placement(&self) -> Result<HeadPlacement> {
        Ok(self.variant.placement(self.encoder.num_layers, self.layer)?)
    }

    pub fn validate(&self) -> Result<()> {
        let placement = self.placement()?;
        self.variant.check_freeze(&self.freeze)?;
        self.freeze.validate(placement.nsp_enabled)?;
        if self.layer.is_some() && !self.variant.is_lowered() {
            return Err(config_err(format!("`layer` has no meaning for variant {}", self.variant.name())));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds must not be empty"));
        }
        if self.encoder.max_position < LONG_LEN {
            return Err(config_err(format!(
                "encoder.max_position {} is below the long pre-training length {LONG_LEN}",
                self.encoder.max_position
            )));
        }
        if self.encoder.max_position > 512 {
            return Err(config_err("encoder.max_position exceeds 512"));
        }
        self.model_config(8)?.validate()?;
        self.pretrain_config(0).validate()?;
        self.finetune_config(0).validate()?;
        if self.finetune.max_len < 8 || self.finetune.max_len > self.encoder.max_position {
            return Err(config_err("finetune.max_len must lie in 8..=encoder.max_position"));
        }
        self.task_spec().validate(&self.heads_config()?)?;
        self.probe_config(0).validate()?;
        if self.probe.length_classes < 2 || self.probe.content_words < 2 {
            return Err(config_err("probe.length_classes and probe.content_words must be at least 2"));
        }
        self.pipeline_config()?.validate()?;
        if self.data.min_freq == 0 {
            return Err(config_err("data.min_freq must be positive"));
        }
        Ok(())
    }

    pub fn heads_config(&self) -> Result<HeadsConfig> {
        Ok(HeadsConfig {
            placement: self.placement()?,
            concat: self.heads.pt_concat,
            nsp_repr: self.heads.nsp_repr,
            tie_weights: self.heads.tie_weights,
            loss_weights: self.heads.loss_weights,
        })
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let e = &self.encoder;
        let encoder = EncoderConfig {
            num_layers: e.num_layers,
            num_heads: e.num_heads,
            hidden_size: e.hidden_size,
            ff_size: e.ff_size,
            max_position: e.max_position,
            vocab_size,
            type_vocab: e.type_vocab,
            dropout_p: self.pretrain.dropout_p,
            layer_norm_eps: e.layer_norm_eps,
            init_std: e.init_std,
        };
        Ok(ModelConfig { encoder, heads: self.heads_config()?, task: None })
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let d = &self.data;
        Ok(PipelineConfig {
            min_freq: d.min_freq,
            masking: d.masking.clone(),
            bigram: BigramConfig {
                enabled: self.placement()?.bigram_shift_enabled,
                rate: d.bigram_rate,
                granularity: d.bigram_granularity,
            },
        })
    }

    pub fn pretrain_config(&self, seed: u64) -> TrainConfig {
        let p = &self.pretrain;
        TrainConfig {
            phase: Phase::Pretrain,
            lr: p.lr,
            weight_decay: p.weight_decay,
            batch_size_short: p.batch_size_short,
            batch_size_long: p.batch_size_long,
            dropout_p: p.dropout_p,
            total_steps: p.total_steps,
            seed,
            checkpoint_every: p.checkpoint_every,
            adam: p.adam,
        }
    }

    pub fn finetune_config(&self, seed: u64) -> TrainConfig {
        let f = &self.finetune;
        TrainConfig {
            phase: Phase::Finetune,
            lr: f.lr,
            weight_decay: f.weight_decay,
            batch_size_short: f.batch_size,
            batch_size_long: f.batch_size,
            dropout_p: f.dropout_p,
            total_steps: f.total_steps,
            seed,
            checkpoint_every: 0,
            adam: f.adam,
        }
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec { task: self.finetune.task, ft_concat: self.finetune.ft_concat }
    }

    pub fn span_decoder(&self) -> SpanDecoder {
        SpanDecoder { max_answer_len: self.finetune.max_answer_len, null_threshold: self.finetune.null_threshold }
    }

    pub fn probe_config(&self, seed: u64) -> ProbeConfig {
        let p = &self.probe;
        ProbeConfig { hidden: p.hidden.clone(), lr: p.lr, weight_decay: p.weight_decay, batch_size: p.batch_size, epochs: p.epochs, seed }
    }

    pub fn sweep_variants(&self) -> Vec<Variant> {
        if self.sweep.variants.is_empty() { vec![self.variant] } else { self.sweep.variants.clone() }
    }

    pub fn sweep_pt_concat(&self) -> Vec<ConcatMode> {
        if self.sweep.pt_concat.is_empty() { vec![self.heads.pt_concat] } else { self.sweep.pt_concat.clone() }
    }

    pub fn sweep_ft_concat(&self) -> Vec<ConcatMode> {
        if self.sweep.ft_concat.is_empty() { vec![self.finetune.ft_concat] } else { self.sweep.ft_concat.clone() }
    }
}

/// Set `a.b.c = value` in `table`. The value is read as a TOML literal and
/// taken as a bare string when it is not one.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{assignment}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("override key `{key}` is malformed")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| config_err(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
