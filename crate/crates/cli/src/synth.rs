use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use dociq::corpus::{generate_corpus, CorpusConfig, MANIFEST_FILE};
use dociq::train::parse_size;

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value = "corpus")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub originals: usize,
    /// Page size HxW
    #[arg(long, default_value = "256x256")]
    pub size: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-score rater noise
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Spread of per-rater offsets
    #[arg(long)]
    pub bias_sd: Option<f64>,
    #[arg(long)]
    pub raters: Option<usize>,
}

impl SynthArgs {
    pub fn corpus_config(&self) -> anyhow::Result<CorpusConfig> {
        let mut cfg = CorpusConfig::with_seed(self.seed);
        cfg.originals = self.originals;
        cfg.size = parse_size(&self.size)?;
        if let Some(v) = self.noise_sd {
            cfg.rating.rater_noise_sd = v;
        }
        if let Some(v) = self.bias_sd {
            cfg.rating.rater_bias_sd = v;
        }
        if let Some(r) = self.raters {
            cfg.rating.rater_count = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(args: &SynthArgs) -> anyhow::Result<()> {
    let cfg = args.corpus_config()?;
    let samples = generate_corpus(&args.out, &cfg).with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} records to {}",
        samples.len(),
        args.out.join(MANIFEST_FILE).display()
    );
    Ok(())
}
