use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hibert::commands;
use hibert::config::ExperimentConfig;
use hibert::dataset::{build_data, write_synthetic, SynthSizes};
use hibert::Result;

#[derive(Parser)]
#[command(name = "hibert", version, about = "Hierarchical multitask BERT pre-training at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration value, e.g. `--set pretrain.lr=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for this run; defaults to the first entry of `seeds`.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<(ExperimentConfig, u64)> {
        let config = ExperimentConfig::load(&self.config, &self.overrides)?;
        let seed = self.seed.unwrap_or(config.seeds[0]);
        Ok((config, seed))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a toy corpus and QA/NLI record files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = SynthSizes::default().documents)]
        documents: usize,
        #[arg(long, default_value_t = SynthSizes::default().qa_train)]
        qa_train: usize,
        #[arg(long, default_value_t = SynthSizes::default().qa_eval)]
        qa_eval: usize,
        #[arg(long, default_value_t = SynthSizes::default().nli_train)]
        nli_train: usize,
        #[arg(long, default_value_t = SynthSizes::default().nli_eval)]
        nli_eval: usize,
    },
    /// Print the resolved configuration and its hash.
    ShowConfig {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Build the vocabulary and pre-training examples from `data.corpus`.
    BuildData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train on an example directory.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Fine-tune a checkpoint on the configured task.
    Finetune {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a fine-tuned checkpoint.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the probing tasks on a frozen checkpoint.
    Probe {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the variant × placement × concat × seed matrix.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, seed, documents, qa_train, qa_eval, nli_train, nli_eval } => {
            let sizes = SynthSizes { documents, qa_train, qa_eval, nli_train, nli_eval, ..SynthSizes::default() };
            write_synthetic(&out, sizes, seed)?;
            eprintln!("wrote synthetic data to {}", out.display());
        }
        Command::ShowConfig { cfg } => {
            let (config, seed) = cfg.load()?;
            print!("{}", config.to_toml());
            println!("# hash (seed {seed}): {}", config.for_seed(seed).hash());
        }
        Command::BuildData { cfg, out } => {
            let (config, seed) = cfg.load()?;
            let m = build_data(&config, seed, &out)?;
            eprintln!("{} short and {} long examples, vocabulary {} -> {}", m.short.count, m.long.count, m.vocab_size, out.display());
        }
        Command::Pretrain { cfg, data, out, resume } => {
            let (config, seed) = cfg.load()?;
            let ck = commands::pretrain(&config, seed, &data, &out, resume.as_deref())?;
            eprintln!("pre-trained {} for {} steps -> {}", ck.variant.name(), ck.progress.step, out.display());
        }
        Command::Finetune { cfg, checkpoint, out } => {
            let (config, seed) = cfg.load()?;
            let ck = commands::finetune(&config, seed, &checkpoint, &out)?;
            eprintln!("fine-tuned for {} steps -> {}", ck.progress.step, out.display());
        }
        Command::Eval { cfg, checkpoint, report } => {
            let (config, _) = cfg.load()?;
            for r in commands::eval(&config, &checkpoint, &report)? {
                println!("{} {} {:.4}", r.task, r.metric, r.value);
            }
        }
        Command::Probe { cfg, checkpoint, report } => {
            let (config, _) = cfg.load()?;
            for r in commands::probe(&config, &checkpoint, &report)? {
                println!("{} {} {:.4}", r.task, r.metric, r.value);
            }
        }
        Command::Sweep { cfg, out } => {
            let (config, _) = cfg.load()?;
            let s = commands::sweep(&config, &out)?;
            for r in &s.rejected {
                eprintln!("rejected {}: {}", r.cell, r.reason);
            }
            eprintln!("{} rows written, {} cells rejected, {} already reported", s.rows.len(), s.rejected.len(), s.skipped);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
