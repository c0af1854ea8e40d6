use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::Args;
use dociq::corpus::CORPUS_META_FILE;
use dociq::model::{save_checkpoint, Ablations, ModelConfig};
use dociq::train::{run_training, EvalReport, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::ingest::rebase;
use crate::TrainOpts;

pub const CONFIG_FILE: &str = "config.txt";
pub const MODEL_CONFIG_FILE: &str = "model_config.json";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CHECKPOINT_FILE: &str = "best.safetensors";
pub const TEST_MANIFEST_FILE: &str = "test_manifest.jsonl";
pub const REPORT_FILE: &str = "report.json";

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated: no_layout, no_fusion, no_multirater
    #[arg(long)]
    pub ablate: Option<String>,
}

/// Everything needed to reproduce and audit one training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub model_config: ModelConfig,
    pub ablation: String,
    pub seed: u64,
    /// Seed recorded in the corpus metadata, when the corpus has one.
    pub corpus_seed: Option<u64>,
    pub data: PathBuf,
    pub split_sizes: [usize; 3],
    pub best_epoch: usize,
    pub param_count: usize,
    pub test: EvalReport,
    pub wall_clock_secs: f64,
}

fn corpus_seed(base: &Path) -> Option<u64> {
    let text = fs::read_to_string(base.join(CORPUS_META_FILE)).ok()?;
    serde_json::from_str::<serde_json::Value>(&text).ok()?["seed"].as_u64()
}

/// Train with `config` on `data`, writing every artifact under `out`.
pub fn train_into(data: &Path, config: &TrainConfig, out: &Path) -> anyhow::Result<RunReport> {
    let start = Instant::now();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(CONFIG_FILE), config.to_flat())?;
    let mut log = BufWriter::new(File::create(out.join(LOG_FILE))?);
    let run = run_training(data, config, |epoch| {
        serde_json::to_writer(&mut log, epoch).map_err(dociq::Error::from)?;
        writeln!(log)?;
        log.flush()?;
        Ok(())
    })?;
    let model_config = run.outcome.best.config().clone();
    fs::write(out.join(MODEL_CONFIG_FILE), serde_json::to_string_pretty(&model_config)?)?;
    save_checkpoint(&run.outcome.best, out.join(CHECKPOINT_FILE))?;
    let mut test = run.splits.test.clone();
    rebase(&mut test, &run.splits.base, out)?;
    dociq::ingest::write_manifest(out.join(TEST_MANIFEST_FILE), &test)?;
    let meta = run.splits.base.join(CORPUS_META_FILE);
    if meta.exists() {
        fs::copy(&meta, out.join(CORPUS_META_FILE))?;
    }
    let report = RunReport {
        config: config.clone(),
        model_config,
        ablation: config.ablations.label(),
        seed: config.seed,
        corpus_seed: corpus_seed(&run.splits.base),
        data: data.to_path_buf(),
        split_sizes: [run.splits.train.len(), run.splits.val.len(), run.splits.test.len()],
        best_epoch: run.outcome.best_epoch,
        param_count: run.param_count,
        test: run.test_report,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    fs::write(out.join(REPORT_FILE), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

pub fn run(args: &TrainArgs) -> anyhow::Result<()> {
    let mut cfg = args.opts.resolve()?;
    if let Some(list) = &args.ablate {
        cfg.ablations = Ablations::parse(list)?;
    }
    let report = train_into(&args.opts.data, &cfg, &args.out)?;
    println!(
        "{} ({} parameters, best epoch {})\n{}",
        report.ablation,
        report.param_count,
        report.best_epoch,
        report.test.table()
    );
    Ok(())
}
