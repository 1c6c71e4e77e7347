//! Downstream metrics and the frozen-encoder probing harness.

mod downstream;
mod metrics;
mod probe;
mod probe_data;
mod span;

use alloc::string::String;

use serde::{Deserialize, Serialize};

pub use downstream::{argmax, evaluate_nli, evaluate_qa, predict_qa, prediction_text, QaScores};
pub use metrics::{exact_match, f1_overlap, normalize_answer, token_f1};
pub use probe::{probe_features, probe_run, train_probe, ProbeConfig, ProbeResult};
pub use probe_data::{
    bigram_shift_probe, sentence_length_probe, synthetic_probe_datasets, word_content_probe, ProbeDataset, ProbeItem,
};
pub use span::{SpanDecoder, SpanPrediction};

/// One result line: which model, where its heads sit, what was measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    pub mlm_layer: usize,
    pub nsp_layer: usize,
    pub pt_concat: String,
    pub ft_concat: String,
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    pub config_hash: String,
}
