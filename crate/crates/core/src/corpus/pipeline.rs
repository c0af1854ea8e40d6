//! Randomized enhancement pipeline.
//!
//! Stage order: boundary detection / background removal, dewarp, demoire,
//! occlusion removal, then deblur, deshadow and enhancement in a shuffled
//! order. Every stage after boundary detection independently picks one of
//! its algorithms or is skipped, uniformly over `{skip, 0..k}`. The
//! algorithms themselves are small parameterized transforms.

use std::fmt;

use image::{Rgb, RgbImage};
use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use super::imgops::{apply_curve, blur_plane, chroma, gaussian_blur, luma, luma_plane, remap, to_u8};
use crate::seed::rng_for;
use crate::{Error, Result};

pub const VARIANTS_PER_IMAGE: usize = 10;
const MAX_RESAMPLE: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    BoundaryDetection,
    Dewarp,
    Demoire,
    OcclusionRemoval,
    Deblur,
    Deshadow,
    Enhancement,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::BoundaryDetection,
        Stage::Dewarp,
        Stage::Demoire,
        Stage::OcclusionRemoval,
        Stage::Deblur,
        Stage::Deshadow,
        Stage::Enhancement,
    ];

    /// Stages run in this order at the head of every pipeline.
    pub const FIXED_PREFIX: [Stage; 4] = [
        Stage::BoundaryDetection,
        Stage::Dewarp,
        Stage::Demoire,
        Stage::OcclusionRemoval,
    ];

    /// Stages whose relative order is shuffled per variant.
    pub const SHUFFLED_TAIL: [Stage; 3] = [Stage::Deblur, Stage::Deshadow, Stage::Enhancement];

    /// Number of available algorithms.
    pub fn option_count(self) -> usize {
        match self {
            Stage::BoundaryDetection => 1,
            Stage::Dewarp => 3,
            Stage::Demoire => 2,
            Stage::OcclusionRemoval => 2,
            Stage::Deblur => 3,
            Stage::Deshadow => 4,
            Stage::Enhancement => 9,
        }
    }

    pub fn skippable(self) -> bool {
        self != Stage::BoundaryDetection
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::BoundaryDetection => "boundary_detection",
            Stage::Dewarp => "dewarp",
            Stage::Demoire => "demoire",
            Stage::OcclusionRemoval => "occlusion_removal",
            Stage::Deblur => "deblur",
            Stage::Deshadow => "deshadow",
            Stage::Enhancement => "enhancement",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Algorithm index or skip. Serialized as an integer or the string `"skip"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Choice {
    Skip,
    Algorithm(usize),
}

impl Serialize for Choice {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Choice::Skip => s.serialize_str("skip"),
            Choice::Algorithm(i) => s.serialize_u64(*i as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Choice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct ChoiceVisitor;

        impl Visitor<'_> for ChoiceVisitor {
            type Value = Choice;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an algorithm index or \"skip\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Choice, E> {
                Ok(Choice::Algorithm(v as usize))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Choice, E> {
                usize::try_from(v)
                    .map(Choice::Algorithm)
                    .map_err(|_| E::custom("negative algorithm index"))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Choice, E> {
                match v {
                    "skip" | "SKIP" => Ok(Choice::Skip),
                    other => Err(E::custom(format!("unknown choice `{other}`"))),
                }
            }
        }

        d.deserialize_any(ChoiceVisitor)
    }
}

/// The stage choices that produced one enhanced variant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub stage_order: Vec<Stage>,
    pub choices: IndexMap<Stage, Choice>,
    pub variant_index: usize,
}

impl PipelineTrace {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(format!("pipeline trace: {msg}")));
        if self.variant_index >= VARIANTS_PER_IMAGE {
            return bad(format!("variant index {} out of range", self.variant_index));
        }
        if self.stage_order.len() != Stage::ALL.len() {
            return bad(format!("{} stages, expected {}", self.stage_order.len(), Stage::ALL.len()));
        }
        if self.stage_order[..4] != Stage::FIXED_PREFIX {
            return bad("fixed stage prefix out of order".into());
        }
        let mut tail = self.stage_order[4..].to_vec();
        tail.sort();
        if tail != Stage::SHUFFLED_TAIL {
            return bad("last three stages are not a permutation of deblur/deshadow/enhancement".into());
        }
        for stage in Stage::ALL {
            match self.choices.get(&stage) {
                None => return bad(format!("no choice recorded for {stage}")),
                Some(Choice::Skip) if !stage.skippable() => {
                    return bad(format!("{stage} cannot be skipped"))
                }
                Some(Choice::Algorithm(i)) if *i >= stage.option_count() => {
                    return bad(format!(
                        "{stage} algorithm {i} exceeds option count {}",
                        stage.option_count()
                    ))
                }
                _ => {}
            }
        }
        if self.choices.len() != Stage::ALL.len() {
            return bad("unexpected stages in choices".into());
        }
        Ok(())
    }

    fn same_recipe(&self, other: &PipelineTrace) -> bool {
        self.stage_order == other.stage_order && self.choices == other.choices
    }
}

fn sample_trace<R: Rng>(rng: &mut R, variant_index: usize) -> PipelineTrace {
    let mut tail = Stage::SHUFFLED_TAIL;
    tail.shuffle(rng);
    let stage_order: Vec<Stage> = Stage::FIXED_PREFIX.iter().chain(tail.iter()).copied().collect();
    let mut choices = IndexMap::new();
    for &stage in &stage_order {
        let choice = if stage.skippable() {
            match rng.gen_range(0..=stage.option_count()) {
                0 => Choice::Skip,
                k => Choice::Algorithm(k - 1),
            }
        } else {
            Choice::Algorithm(rng.gen_range(0..stage.option_count()))
        };
        choices.insert(stage, choice);
    }
    PipelineTrace {
        stage_order,
        choices,
        variant_index,
    }
}

/// Produce exactly [`VARIANTS_PER_IMAGE`] enhanced variants of `image`.
pub fn run_enhancement_pipeline(image: &RgbImage, seed: u64) -> Result<Vec<(RgbImage, PipelineTrace)>> {
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::invalid("empty image"));
    }
    let mut traces: Vec<PipelineTrace> = Vec::with_capacity(VARIANTS_PER_IMAGE);
    for v in 0..VARIANTS_PER_IMAGE {
        let mut rng = rng_for(seed, &format!("pipeline/variant/{v}"));
        let mut trace = sample_trace(&mut rng, v);
        let mut attempts = 0;
        while traces.iter().any(|t| t.same_recipe(&trace)) {
            attempts += 1;
            if attempts >= MAX_RESAMPLE {
                log::warn!("variant {v}: accepting duplicate trace after {MAX_RESAMPLE} resamples");
                break;
            }
            trace = sample_trace(&mut rng, v);
        }
        traces.push(trace);
    }
    Ok(traces
        .into_iter()
        .map(|trace| (apply_trace(image, &trace), trace))
        .collect())
}

/// Replay a trace on an image.
pub fn apply_trace(image: &RgbImage, trace: &PipelineTrace) -> RgbImage {
    let mut img = image.clone();
    for &stage in &trace.stage_order {
        if let Some(Choice::Algorithm(k)) = trace.choices.get(&stage) {
            img = apply_stage(&img, stage, *k);
        }
    }
    img
}

fn apply_stage(img: &RgbImage, stage: Stage, k: usize) -> RgbImage {
    match stage {
        Stage::BoundaryDetection => remove_background(img),
        Stage::Dewarp => dewarp(img, k),
        Stage::Demoire => demoire(img, k),
        Stage::OcclusionRemoval => remove_occlusion(img, k),
        Stage::Deblur => deblur(img, k),
        Stage::Deshadow => deshadow(img, k),
        Stage::Enhancement => enhance(img, k),
    }
}

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);

/// Bright low-chroma pixels are snapped to white.
fn remove_background(img: &RgbImage) -> RgbImage {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        if luma(p) > 215.0 && chroma(p) < 24 {
            *p = WHITE;
        }
    }
    out
}

fn dewarp(img: &RgbImage, k: usize) -> RgbImage {
    let (w, h) = (img.width() as f32, img.height() as f32);
    let (cx, cy) = (w / 2.0, h / 2.0);
    match k {
        0 => {
            let a = 0.8f32.to_radians();
            let (c, s) = (a.cos(), a.sin());
            remap(img, WHITE, |x, y| {
                let (dx, dy) = (x - cx, y - cy);
                (cx + c * dx - s * dy, cy + s * dx + c * dy)
            })
        }
        1 => remap(img, WHITE, |x, y| {
            (x + 1.5 * (2.0 * std::f32::consts::PI * y / (h / 2.0)).sin(), y)
        }),
        _ => remap(img, WHITE, |x, y| (cx + (x - cx) / 1.03, cy + (y - cy) / 1.03)),
    }
}

fn demoire(img: &RgbImage, k: usize) -> RgbImage {
    match k {
        0 => gaussian_blur(img, 0.8),
        _ => imageproc::filter::median_filter(img, 1, 1),
    }
}

fn remove_occlusion(img: &RgbImage, k: usize) -> RgbImage {
    let mut out = img.clone();
    match k {
        0 => {
            for p in out.pixels_mut() {
                if chroma(p) > 60 {
                    *p = WHITE;
                }
            }
        }
        _ => {
            for p in out.pixels_mut() {
                if chroma(p) > 40 {
                    let l = luma(p);
                    for ch in 0..3 {
                        p[ch] = to_u8(0.4 * p[ch] as f32 + 0.6 * l);
                    }
                }
            }
        }
    }
    out
}

/// Unsharp masking.
fn deblur(img: &RgbImage, k: usize) -> RgbImage {
    let (sigma, amount) = [(1.0, 0.6), (1.5, 1.0), (2.5, 1.5)][k.min(2)];
    let blurred = gaussian_blur(img, sigma);
    let mut out = img.clone();
    for (p, b) in out.pixels_mut().zip(blurred.pixels()) {
        for ch in 0..3 {
            let v = p[ch] as f32;
            p[ch] = to_u8(v + amount * (v - b[ch] as f32));
        }
    }
    out
}

/// Illumination flattening: divide by a smooth background estimate.
fn deshadow(img: &RgbImage, k: usize) -> RgbImage {
    let (sigma, strength) = [(6.0, 1.0), (12.0, 1.0), (6.0, 0.6), (20.0, 0.8)][k.min(3)];
    let (w, h) = (img.width() as usize, img.height() as usize);
    let bg = blur_plane(&luma_plane(img), w, h, sigma);
    let mut out = img.clone();
    for (i, p) in out.pixels_mut().enumerate() {
        let gain = (240.0 / bg[i].max(16.0)).powf(strength);
        for ch in 0..3 {
            p[ch] = to_u8(p[ch] as f32 * gain);
        }
    }
    out
}

fn enhance(img: &RgbImage, k: usize) -> RgbImage {
    match k {
        0 => apply_curve(img, |v| 255.0 * (v / 255.0).powf(0.7)),
        1 => apply_curve(img, |v| 255.0 * (v / 255.0).powf(1.4)),
        2 => {
            // luma percentile stretch
            let mut l = luma_plane(img);
            l.sort_by(f32::total_cmp);
            let lo = l[l.len() * 2 / 100];
            let hi = l[(l.len() * 98 / 100).min(l.len() - 1)].max(lo + 1.0);
            apply_curve(img, |v| (v - lo) * 255.0 / (hi - lo))
        }
        3 => apply_curve(img, |v| 128.0 + 1.3 * (v - 128.0)),
        4 => saturate(img, 1.4),
        5 => saturate(img, 0.0),
        6 => apply_curve(img, |v| 255.0 / (1.0 + (-(v - 140.0) / 18.0).exp())),
        7 => apply_curve(img, |v| v + 25.0),
        _ => gray_world(img),
    }
}

fn saturate(img: &RgbImage, factor: f32) -> RgbImage {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        let l = luma(p);
        for ch in 0..3 {
            p[ch] = to_u8(l + factor * (p[ch] as f32 - l));
        }
    }
    out
}

fn gray_world(img: &RgbImage) -> RgbImage {
    let n = (img.width() * img.height()) as f64;
    let mut sums = [0.0f64; 3];
    for p in img.pixels() {
        for ch in 0..3 {
            sums[ch] += p[ch] as f64;
        }
    }
    let means = sums.map(|s| s / n);
    let grey = (means[0] + means[1] + means[2]) / 3.0;
    let gains = means.map(|m| (grey / m.max(1.0)) as f32);
    let mut out = img.clone();
    for p in out.pixels_mut() {
        for ch in 0..3 {
            p[ch] = to_u8(p[ch] as f32 * gains[ch]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::render_document;
    use std::collections::HashSet;

    fn page() -> RgbImage {
        render_document(11, (96, 96)).unwrap().image
    }

    #[test]
    fn ten_valid_variants() {
        let img = page();
        let out = run_enhancement_pipeline(&img, 5).unwrap();
        assert_eq!(out.len(), VARIANTS_PER_IMAGE);
        for (i, (v, t)) in out.iter().enumerate() {
            t.validate().unwrap();
            assert_eq!(t.variant_index, i);
            assert_eq!(v.dimensions(), img.dimensions());
        }
        let distinct: HashSet<_> = out.iter().map(|(_, t)| format!("{t:?}")).collect();
        assert_eq!(distinct.len(), VARIANTS_PER_IMAGE);
    }

    #[test]
    fn deterministic() {
        let img = page();
        let a = run_enhancement_pipeline(&img, 17).unwrap();
        let b = run_enhancement_pipeline(&img, 17).unwrap();
        for ((ia, ta), (ib, tb)) in a.iter().zip(&b) {
            assert_eq!(ta, tb);
            assert_eq!(ia.as_raw(), ib.as_raw());
        }
    }

    #[test]
    fn every_stage_algorithm_alters_the_image() {
        // a skin-toned patch gives occlusion removal something to act on
        let mut img = page();
        for y in 20..50 {
            for x in 30..70 {
                img.put_pixel(x, y, Rgb([205, 150, 125]));
            }
        }
        for stage in Stage::ALL {
            let mut outputs = Vec::new();
            for k in 0..stage.option_count() {
                let out = apply_stage(&img, stage, k);
                assert_ne!(out.as_raw(), img.as_raw(), "{stage}/{k} is a no-op");
                outputs.push(out.into_raw());
            }
            let distinct: HashSet<_> = outputs.iter().collect();
            assert_eq!(distinct.len(), outputs.len(), "{stage} has duplicate algorithms");
        }
    }

    #[test]
    fn trace_validation_catches_bad_traces() {
        let mut rng = rng_for(0, "t");
        let good = sample_trace(&mut rng, 0);
        good.validate().unwrap();

        let mut t = good.clone();
        t.choices.insert(Stage::Demoire, Choice::Algorithm(2));
        assert!(t.validate().is_err());

        let mut t = good.clone();
        t.stage_order.swap(1, 2);
        assert!(t.validate().is_err());

        let mut t = good.clone();
        t.choices.insert(Stage::BoundaryDetection, Choice::Skip);
        assert!(t.validate().is_err());

        let mut t = good;
        t.variant_index = 10;
        assert!(t.validate().is_err());
    }

    #[test]
    fn trace_json_shape() {
        let mut rng = rng_for(3, "t");
        let t = sample_trace(&mut rng, 4);
        let json = serde_json::to_value(&t).unwrap();
        assert_eq!(json["stage_order"][0], "boundary_detection");
        assert_eq!(json["choices"]["boundary_detection"], 0);
        let back: PipelineTrace = serde_json::from_value(json).unwrap();
        assert_eq!(back, t);
        let skip: Choice = serde_json::from_str("\"skip\"").unwrap();
        assert_eq!(skip, Choice::Skip);
    }
}
