//! Command implementations behind the `dociq` binary.

pub mod ablate;
pub mod eval;
pub mod ingest;
pub mod plot;
pub mod synth;
pub mod train;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "dociq", version, about = "Document image quality: corpus, screening, training, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic rated corpus
    Synth(synth::SynthArgs),
    /// Validate or screen a manifest
    #[command(subcommand)]
    Ingest(ingest::IngestCommand),
    /// Train a model on a corpus
    Train(train::TrainArgs),
    /// Evaluate a checkpoint or a predictions file against a manifest
    Eval(eval::EvalArgs),
    /// Score one image with a checkpoint
    Score(eval::ScoreArgs),
    /// Histogram the MOS distribution of each dimension
    PlotMos(plot::PlotArgs),
    /// Train and compare the five ablation configurations
    Ablate(ablate::AblateArgs),
}

/// Options shared by `train` and `ablate`.
#[derive(Args, Debug, Clone)]
pub struct TrainOpts {
    /// Corpus directory or manifest file
    #[arg(long)]
    pub data: PathBuf,
    /// Flat `key = value` training config
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Tiny backbone at 256x256
    #[arg(long)]
    pub desk: bool,
    /// Root seed; overrides the config file
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config file
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Model input size HxW; overrides the config file and --desk
    #[arg(long)]
    pub input_size: Option<String>,
}

impl TrainOpts {
    pub fn resolve(&self) -> anyhow::Result<dociq::train::TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => dociq::train::TrainConfig::from_file(p)?,
            None => dociq::train::TrainConfig::default(),
        };
        if self.desk {
            cfg = cfg.desk();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(s) = &self.input_size {
            cfg.input_size = dociq::train::parse_size(s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => synth::run(&a),
        Command::Ingest(c) => ingest::run(&c),
        Command::Train(a) => train::run(&a),
        Command::Eval(a) => eval::run(&a),
        Command::Score(a) => eval::score(&a),
        Command::PlotMos(a) => plot::run(&a),
        Command::Ablate(a) => ablate::run(&a),
    }
}
