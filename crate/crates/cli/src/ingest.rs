use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Subcommand;
use dociq::corpus::CORPUS_META_FILE;
use dociq::ingest::{load_manifest, screen_samples, write_manifest, DocumentSample};
use dociq::train::manifest_path;

#[derive(Subcommand, Debug)]
pub enum IngestCommand {
    /// Check schema, score ranges, MOS consistency and file references
    Validate { path: PathBuf },
    /// Reject inconsistent raters and write a cleaned manifest
    Screen {
        path: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn base_of(manifest: &Path) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).to_path_buf()
}

/// Make image and mask paths valid relative to `to` instead of `from`.
/// Paths stay relative when both directories are the same.
pub fn rebase(samples: &mut [DocumentSample], from: &Path, to: &Path) -> anyhow::Result<()> {
    let from_abs = fs::canonicalize(if from.as_os_str().is_empty() { Path::new(".") } else { from })?;
    let to_abs = fs::canonicalize(if to.as_os_str().is_empty() { Path::new(".") } else { to })?;
    if from_abs == to_abs {
        return Ok(());
    }
    for s in samples {
        s.image = from_abs.join(&s.image);
        if let Some(m) = &s.mask {
            s.mask = Some(from_abs.join(m));
        }
    }
    Ok(())
}

pub fn run(cmd: &IngestCommand) -> anyhow::Result<()> {
    match cmd {
        IngestCommand::Validate { path } => {
            let manifest = manifest_path(path);
            let samples = load_manifest(&manifest).with_context(|| format!("validating {}", manifest.display()))?;
            let origins: std::collections::BTreeSet<_> = samples.iter().map(|s| s.origin_id.as_str()).collect();
            let dims: Vec<&str> = samples.first().map(|s| s.dimensions().collect()).unwrap_or_default();
            println!(
                "ok: {} records, {} origins, dimensions [{}]",
                samples.len(),
                origins.len(),
                dims.join(", ")
            );
            Ok(())
        }
        IngestCommand::Screen { path, out } => {
            let manifest = manifest_path(path);
            let samples = load_manifest(&manifest)?;
            let (mut screened, report) = screen_samples(&samples)?;
            let out_dir = base_of(out);
            if !out_dir.as_os_str().is_empty() {
                fs::create_dir_all(&out_dir)?;
            }
            rebase(&mut screened, &base_of(&manifest), &out_dir)?;
            write_manifest(out, &screened)?;
            let meta_src = base_of(&manifest).join(CORPUS_META_FILE);
            let meta_dst = out_dir.join(CORPUS_META_FILE);
            if meta_src.exists() && !meta_dst.exists() {
                fs::copy(&meta_src, &meta_dst)?;
            }
            let report_path = out.with_extension("screening.json");
            fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
            println!(
                "rejected {} rater/dimension pair(s); wrote {} and {}",
                report.total(),
                out.display(),
                report_path.display()
            );
            Ok(())
        }
    }
}
