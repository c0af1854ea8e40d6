use std::collections::HashMap;
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::Args;
use dociq::corpus::LayoutMask;
use dociq::ingest::{load_manifest_with, ManifestOptions};
use dociq::model::{image_tensor, load_checkpoint};
use dociq::train::{dataset_shape, evaluate_predictions, load_samples, manifest_path, predict, EvalReport};
use image::imageops::{self, FilterType};
use ndarray::Array2;
use serde::Deserialize;

pub const METRICS_FILE: &str = "metrics.json";

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["ckpt", "predictions"]))]
pub struct EvalArgs {
    /// Corpus directory or manifest with ground-truth MOS
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// JSON-lines with `image` and a `mos` map, matched to `--data` by image path
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also report PLCC after a four-parameter logistic fit
    #[arg(long)]
    pub logistic: bool,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Layout mask PNG; omitted means all background
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Deserialize)]
struct PredictionRecord {
    image: PathBuf,
    mos: HashMap<String, f64>,
}

fn read_predictions(path: &Path) -> anyhow::Result<HashMap<PathBuf, HashMap<String, f64>>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = HashMap::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        if out.insert(rec.image.clone(), rec.mos).is_some() {
            bail!("{}:{}: duplicate image {}", path.display(), i + 1, rec.image.display());
        }
    }
    Ok(out)
}

/// Correlations of a checkpoint or a predictions file against `data`.
pub fn evaluate_args(args: &EvalArgs) -> anyhow::Result<EvalReport> {
    let manifest = manifest_path(&args.data);
    let opts = ManifestOptions::for_manifest(&manifest);
    let samples = load_manifest_with(&manifest, &opts)?;
    let (dims, raters) = dataset_shape(&samples)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let report = if let Some(ckpt) = &args.ckpt {
        let model = load_checkpoint(ckpt)?;
        let cfg = model.config();
        if cfg.dimensions != dims {
            bail!("checkpoint dimensions {:?} differ from manifest {:?}", cfg.dimensions, dims);
        }
        let loaded = load_samples(&samples, base, cfg.input_size, &dims, raters)?;
        let pred = predict(&model, &loaded)?;
        evaluate_predictions(&dims, &pred, &dociq::train::ground_truth(&loaded), args.logistic)?
    } else {
        let path = args.predictions.as_ref().expect("clap enforces one source");
        let preds = read_predictions(path)?;
        let mut pred = Array2::zeros((samples.len(), dims.len()));
        let mut truth = Array2::zeros((samples.len(), dims.len()));
        for (i, s) in samples.iter().enumerate() {
            let p = preds
                .get(&s.image)
                .ok_or_else(|| anyhow!("no prediction for {}", s.image.display()))?;
            for (d, name) in dims.iter().enumerate() {
                pred[(i, d)] = *p
                    .get(name)
                    .ok_or_else(|| anyhow!("prediction for {} lacks `{name}`", s.image.display()))?;
                truth[(i, d)] = s.recompute_mos(name)?;
            }
        }
        evaluate_predictions(&dims, &pred, &truth, args.logistic)?
    };
    Ok(report)
}

pub fn run(args: &EvalArgs) -> anyhow::Result<()> {
    let report = evaluate_args(args)?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join(METRICS_FILE), serde_json::to_string_pretty(&report)?)?;
    print!("{}", report.table());
    for d in &report.dimensions {
        if let Some(l) = d.plcc_logistic {
            println!("{:<16} logistic PLCC {:.4}", d.dimension, l);
        }
    }
    Ok(())
}

pub fn score(args: &ScoreArgs) -> anyhow::Result<()> {
    let model = load_checkpoint(&args.ckpt)?;
    let (h, w) = model.config().input_size;
    let mut img = image::open(&args.image)
        .with_context(|| format!("reading {}", args.image.display()))?
        .to_rgb8();
    if img.dimensions() != (w as u32, h as u32) {
        img = imageops::resize(&img, w as u32, h as u32, FilterType::Triangle);
    }
    let mask = match &args.mask {
        Some(p) => {
            let m = LayoutMask::from_gray(&image::open(p)?.to_luma8());
            Some(m.resized(h, w))
        }
        None => None,
    };
    let pred = model.forward(&image_tensor(&img), mask.as_ref())?;
    let mut out = serde_json::Map::new();
    for (name, v) in model.config().dimensions.iter().zip(pred.mos.iter()) {
        out.insert(name.clone(), serde_json::json!(v));
    }
    println!("{}", serde_json::Value::Object(out));
    Ok(())
}
