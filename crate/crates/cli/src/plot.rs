use std::fs;
use std::path::PathBuf;

use anyhow::bail;
use clap::Args;
use dociq::ingest::{load_manifest_with, ManifestOptions};
use dociq::train::{dataset_shape, manifest_path};
use image::{Rgb, RgbImage};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub const BINS: usize = 20;
pub const BINS_FILE: &str = "mos_bins.json";

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Corpus directory or manifest
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MosBins {
    pub range: (f64, f64),
    pub n: usize,
    pub dimensions: IndexMap<String, Vec<usize>>,
}

/// Counts over `BINS` equal-width bins spanning `range`; the upper edge
/// belongs to the last bin.
pub fn histogram(values: &[f64], (lo, hi): (f64, f64)) -> anyhow::Result<Vec<usize>> {
    if values.is_empty() {
        bail!("no data: nothing to histogram");
    }
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        bail!("empty score range [{lo}, {hi}]");
    }
    let mut counts = vec![0; BINS];
    for &v in values {
        if !(lo..=hi).contains(&v) {
            bail!("MOS {v} outside [{lo}, {hi}]");
        }
        let b = (((v - lo) / (hi - lo)) * BINS as f64) as usize;
        counts[b.min(BINS - 1)] += 1;
    }
    Ok(counts)
}

/// Bar chart with a light grid; no text.
pub fn render_histogram(counts: &[usize]) -> RgbImage {
    const BAR: u32 = 24;
    const GAP: u32 = 4;
    const H: u32 = 240;
    const MARGIN: u32 = 16;
    let w = MARGIN * 2 + counts.len() as u32 * (BAR + GAP) - GAP;
    let mut img = RgbImage::from_pixel(w, H + MARGIN * 2, Rgb([255, 255, 255]));
    for k in 0..=4 {
        let y = MARGIN + H * k / 4;
        for x in MARGIN..w - MARGIN {
            img.put_pixel(x, y, Rgb([225, 225, 225]));
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0).max(1);
    for (i, &c) in counts.iter().enumerate() {
        let bar_h = (c as u64 * H as u64 / max as u64) as u32;
        let x0 = MARGIN + i as u32 * (BAR + GAP);
        for y in MARGIN + H - bar_h..MARGIN + H {
            for x in x0..x0 + BAR {
                img.put_pixel(x, y, Rgb([60, 110, 170]));
            }
        }
    }
    img
}

pub fn mos_bins(args: &PlotArgs) -> anyhow::Result<MosBins> {
    let path = manifest_path(&args.manifest);
    let opts = ManifestOptions::for_manifest(&path);
    let samples = load_manifest_with(&path, &opts)?;
    let (dims, _) = dataset_shape(&samples)?;
    let mut dimensions = IndexMap::new();
    for d in &dims {
        let values = samples.iter().map(|s| s.recompute_mos(d)).collect::<dociq::Result<Vec<_>>>()?;
        dimensions.insert(d.clone(), histogram(&values, opts.score_range)?);
    }
    Ok(MosBins {
        range: opts.score_range,
        n: samples.len(),
        dimensions,
    })
}

pub fn run(args: &PlotArgs) -> anyhow::Result<()> {
    let bins = mos_bins(args)?;
    fs::create_dir_all(&args.out)?;
    for (d, counts) in &bins.dimensions {
        render_histogram(counts).save(args.out.join(format!("mos_{d}.png")))?;
    }
    fs::write(args.out.join(BINS_FILE), serde_json::to_string_pretty(&bins)?)?;
    println!("{} samples, {} dimensions -> {}", bins.n, bins.dimensions.len(), args.out.display());
    Ok(())
}
