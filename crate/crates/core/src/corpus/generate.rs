//! Writing a complete synthetic corpus to disk.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map};

use super::{
    apply_distortion, render_document, run_enhancement_pipeline, synthesize_ratings, DistortionKind,
    DistortionSpec, SimulatedRatingConfig,
};
use crate::ingest::{write_manifest, DocumentSample};
use crate::seed::{child_seed, rng_for};
use crate::{Error, Result, GENERATOR_VERSION};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CORPUS_META_FILE: &str = "corpus_meta.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub originals: usize,
    /// (height, width)
    pub size: (usize, usize),
    pub seed: u64,
    pub severity_range: (f64, f64),
    pub rating: SimulatedRatingConfig,
}

impl CorpusConfig {
    /// Defaults with the rater panel seeded from `seed`.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            originals: 10,
            size: (256, 256),
            seed,
            severity_range: (0.2, 0.9),
            rating: SimulatedRatingConfig {
                panel_seed: child_seed(seed, "panel"),
                ..Default::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.originals == 0 {
            return Err(Error::invalid("corpus needs at least one original"));
        }
        let (lo, hi) = self.severity_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::invalid(format!("bad severity range [{lo}, {hi}]")));
        }
        self.rating.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub seed: u64,
    pub config: CorpusConfig,
    pub generator_version: String,
}

fn origin_id(i: usize) -> String {
    format!("o{i:04}")
}

fn build_origin(out: &Path, config: &CorpusConfig, i: usize) -> Result<Vec<DocumentSample>> {
    let id = origin_id(i);
    let doc = render_document(child_seed(config.seed, &format!("origin/{i}/page")), config.size)?;
    let kind = DistortionKind::ALL[i % DistortionKind::ALL.len()];
    let (lo, hi) = config.severity_range;
    let mut rng = rng_for(config.seed, &format!("origin/{i}/severity"));
    let severity = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let spec = DistortionSpec::new(kind, severity, child_seed(config.seed, &format!("origin/{i}/distortion")))?;
    let captured = apply_distortion(&doc.image, &spec)?;

    let mask_rel = PathBuf::from("masks").join(format!("{id}.png"));
    doc.mask.to_gray().save(out.join(&mask_rel))?;

    let variants = run_enhancement_pipeline(&captured, child_seed(config.seed, &format!("origin/{i}/pipeline")))?;
    let mut samples = Vec::with_capacity(variants.len());
    for (v, (img, trace)) in variants.into_iter().enumerate() {
        let image_rel = PathBuf::from("images").join(format!("{id}_v{v}.png"));
        img.save(out.join(&image_rel))?;
        let ratings = synthesize_ratings(
            &img,
            &doc.image,
            &config.rating,
            child_seed(config.seed, &format!("origin/{i}/ratings/{v}")),
        )?;
        let mut scores = IndexMap::new();
        let mut mos = IndexMap::new();
        for (dim, vals) in ratings {
            mos.insert(dim.clone(), vals.iter().sum::<f64>() / vals.len() as f64);
            scores.insert(dim, vals.into_iter().map(Some).collect());
        }
        let mut extra = Map::new();
        extra.insert(
            "distortion".into(),
            json!({ "kind": kind.name(), "severity": severity }),
        );
        samples.push(DocumentSample {
            image: image_rel,
            mask: Some(mask_rel.clone()),
            origin_id: id.clone(),
            scores,
            mos,
            mos_std: None,
            trace: Some(trace),
            batch: None,
            extra,
        });
    }
    Ok(samples)
}

/// Render, distort, enhance and rate `config.originals` pages into `out`,
/// writing PNGs, `manifest.jsonl` and `corpus_meta.json`. Output is a pure
/// function of the config.
pub fn generate_corpus(out: &Path, config: &CorpusConfig) -> Result<Vec<DocumentSample>> {
    config.validate()?;
    fs::create_dir_all(out.join("images"))?;
    fs::create_dir_all(out.join("masks"))?;
    let per_origin: Vec<Vec<DocumentSample>> = (0..config.originals)
        .into_par_iter()
        .map(|i| build_origin(out, config, i))
        .collect::<Result<_>>()?;
    let samples: Vec<DocumentSample> = per_origin.into_iter().flatten().collect();
    write_manifest(out.join(MANIFEST_FILE), &samples)?;
    let meta = CorpusMeta {
        seed: config.seed,
        config: config.clone(),
        generator_version: GENERATOR_VERSION.to_string(),
    };
    fs::write(out.join(CORPUS_META_FILE), serde_json::to_string_pretty(&meta)?)?;
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::load_manifest;

    #[test]
    fn small_corpus_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = CorpusConfig::with_seed(3);
        cfg.originals = 2;
        cfg.size = (64, 64);
        let written = generate_corpus(dir.path(), &cfg).unwrap();
        assert_eq!(written.len(), 20);
        let loaded = load_manifest(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded, written);
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let out = dir.path().join("again.jsonl");
        write_manifest(&out, &loaded).unwrap();
        assert_eq!(fs::read_to_string(out).unwrap(), text);
        let meta: CorpusMeta =
            serde_json::from_str(&fs::read_to_string(dir.path().join(CORPUS_META_FILE)).unwrap()).unwrap();
        assert_eq!(meta.config, cfg);
    }
}
