//! Deterministic construction of pre-training and fine-tuning examples.

pub mod bigram;
pub mod corpus;
pub mod finetune;
pub mod masking;
pub mod nsp;
pub mod pretrain;
pub mod schedule;
pub mod synth;
pub mod vocab;

/// Label value skipped by the loss.
pub const IGNORE: i64 = -100;

pub use bigram::{apply_bigram_shift, undo_bigram_shift, BigramConfig, BigramShift, SwapGranularity, DISPLACED, IN_PLACE};
pub use corpus::{format_corpus, parse_corpus, Document};
pub use finetune::{build_nli_examples, build_qa_examples, Answer, FinetuneStats, NliExample, NliLabel, NliRecord, QaExample, QaRecord};
pub use masking::{apply_masking, MaskingConfig, MaskingStats};
pub use nsp::{make_nsp_pairs, NspLabel, NspPairs, SentencePair};
pub use pretrain::{build_pretrain_examples, PipelineConfig, PipelineStats, PretrainExample};
pub use schedule::{length_schedule, short_steps, LONG_LEN, SHORT_LEN};
pub use vocab::{tokenize, Vocab};
