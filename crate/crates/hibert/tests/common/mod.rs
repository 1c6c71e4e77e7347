#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use hibert::config::ExperimentConfig;
use hibert::dataset::{write_synthetic, SynthSizes, SYNTH_FILES};
use tempfile::TempDir;

/// Synthetic inputs plus a matching TOML configuration in a scratch directory.
pub struct Workspace {
    pub dir: TempDir,
}

impl Workspace {
    pub fn new(documents: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let sizes = SynthSizes { documents, qa_train: 12, qa_eval: 8, nli_train: 12, nli_eval: 8, ..SynthSizes::default() };
        write_synthetic(&dir.path().join("data"), sizes, 7).unwrap();
        let ws = Self { dir };
        fs::write(ws.config_path(), ws.toml("bert_baseline", None)).unwrap();
        ws
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn config_path(&self) -> PathBuf {
        self.path("experiment.toml")
    }

    pub fn toml(&self, variant: &str, layer: Option<usize>) -> String {
        let data = self.path("data");
        let f = |i: usize| data.join(SYNTH_FILES[i]).display().to_string();
        let layer = layer.map_or(String::new(), |l| format!("layer = {l}\n"));
        format!(
            r#"variant = "{variant}"
{layer}seeds = [0]

[encoder]
num_layers = 2
num_heads = 2
hidden_size = 8
ff_size = 16

[pretrain]
total_steps = 10
batch_size_short = 4
batch_size_long = 1

[finetune]
total_steps = 4
batch_size = 2

[probe]
hidden = [8]
epochs = 3

[data]
corpus = "{}"
qa_train = "{}"
qa_eval = "{}"
nli_train = "{}"
nli_eval = "{}"
"#,
            f(0),
            f(1),
            f(2),
            f(3),
            f(4)
        )
    }

    pub fn config(&self, variant: &str, layer: Option<usize>, overrides: &[&str]) -> ExperimentConfig {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        ExperimentConfig::from_toml(&self.toml(variant, layer), &o).unwrap()
    }
}

pub fn bytes(dir: &Path, file: &str) -> Vec<u8> {
    fs::read(dir.join(file)).unwrap()
}
