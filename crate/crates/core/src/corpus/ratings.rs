//! Simulated rater panel.
//!
//! Each dimension has a latent quality in [0, 1] computed from full-reference
//! statistics of the variant against the clean page. Rater `r` reports
//! `lo + (hi - lo) * q + bias[r] + noise`, clamped to the score range.
//! Biases are drawn once per rater from the panel seed, so a rater keeps
//! the same temperament across every image of a corpus.

use image::RgbImage;
use indexmap::IndexMap;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::imgops::mean_abs_laplacian;
use crate::seed::rng_for;
use crate::{Error, Result, DEFAULT_DIMENSIONS};

/// Steepness of the sharpness penalty on `|ln(hf_variant / hf_reference)|`.
const SHARPNESS_SLOPE: f64 = 1.2;
/// Mean absolute channel error (fraction of 255) at which colour quality drops to 1/e.
const COLOR_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedRatingConfig {
    pub rater_count: usize,
    pub dimensions: Vec<String>,
    pub score_range: (f64, f64),
    pub rater_noise_sd: f64,
    pub rater_bias_sd: f64,
    /// Seed for the per-rater biases.
    pub panel_seed: u64,
}

impl Default for SimulatedRatingConfig {
    fn default() -> Self {
        Self {
            rater_count: 15,
            dimensions: DEFAULT_DIMENSIONS.iter().map(|d| d.to_string()).collect(),
            score_range: (1.0, 5.0),
            rater_noise_sd: 0.4,
            rater_bias_sd: 0.3,
            panel_seed: 0,
        }
    }
}

impl SimulatedRatingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rater_count < 3 {
            return Err(Error::invalid(format!(
                "rater_count {} below 3",
                self.rater_count
            )));
        }
        let (lo, hi) = self.score_range;
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::invalid(format!("score range [{lo}, {hi}] is empty")));
        }
        if self.rater_noise_sd < 0.0 || self.rater_bias_sd < 0.0 {
            return Err(Error::invalid("negative rater standard deviation"));
        }
        if self.dimensions.is_empty() {
            return Err(Error::invalid("no rating dimensions"));
        }
        for d in &self.dimensions {
            if !DEFAULT_DIMENSIONS.contains(&d.as_str()) {
                return Err(Error::invalid(format!("no latent model for dimension `{d}`")));
            }
        }
        Ok(())
    }
}

/// Latent quality in [0, 1] for one dimension; 1 when `variant == reference`.
pub fn latent_quality(dimension: &str, variant: &RgbImage, reference: &RgbImage) -> Result<f64> {
    if variant.dimensions() != reference.dimensions() {
        return Err(Error::invalid(format!(
            "variant {:?} and reference {:?} differ in size",
            variant.dimensions(),
            reference.dimensions()
        )));
    }
    Ok(match dimension {
        "sharpness" => sharpness_quality(variant, reference),
        "color_fidelity" => color_quality(variant, reference),
        "overall" => 0.5 * sharpness_quality(variant, reference) + 0.5 * color_quality(variant, reference),
        other => return Err(Error::invalid(format!("no latent model for dimension `{other}`"))),
    })
}

fn sharpness_quality(variant: &RgbImage, reference: &RgbImage) -> f64 {
    let hv = mean_abs_laplacian(variant);
    let hr = mean_abs_laplacian(reference);
    if hv == hr {
        return 1.0;
    }
    let ratio = (hv.max(1e-6)) / (hr.max(1e-6));
    (-SHARPNESS_SLOPE * ratio.ln().abs()).exp()
}

fn color_quality(variant: &RgbImage, reference: &RgbImage) -> f64 {
    let total: u64 = variant
        .as_raw()
        .iter()
        .zip(reference.as_raw())
        .map(|(&a, &b)| u64::from(a.abs_diff(b)))
        .sum();
    let mad = total as f64 / variant.as_raw().len() as f64 / 255.0;
    (-mad / COLOR_SCALE).exp()
}

/// Simulated rater scores for one variant, keyed by dimension in config order.
pub fn synthesize_ratings(
    variant: &RgbImage,
    reference: &RgbImage,
    config: &SimulatedRatingConfig,
    seed: u64,
) -> Result<IndexMap<String, Vec<f64>>> {
    config.validate()?;
    let (lo, hi) = config.score_range;
    let mut noise_rng = rng_for(seed, "ratings/noise");
    let mut out = IndexMap::with_capacity(config.dimensions.len());
    for dim in &config.dimensions {
        let q = latent_quality(dim, variant, reference)?;
        let latent = lo + (hi - lo) * q;
        let mut bias_rng = rng_for(config.panel_seed, &format!("ratings/bias/{dim}"));
        let scores = (0..config.rater_count)
            .map(|_| {
                let bias = gaussian(&mut bias_rng, config.rater_bias_sd);
                let noise = gaussian(&mut noise_rng, config.rater_noise_sd);
                (latent + bias + noise).clamp(lo, hi)
            })
            .collect();
        out.insert(dim.clone(), scores);
    }
    Ok(out)
}

fn gaussian<R: rand::Rng>(rng: &mut R, sd: f64) -> f64 {
    // always draw so that the stream position does not depend on sd
    let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
    z * sd
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::render_document;
    use image::imageops;

    fn quiet() -> SimulatedRatingConfig {
        SimulatedRatingConfig {
            rater_noise_sd: 0.0,
            rater_bias_sd: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn identical_images_get_top_scores() {
        let doc = render_document(2, (96, 96)).unwrap();
        let r = synthesize_ratings(&doc.image, &doc.image, &quiet(), 1).unwrap();
        assert_eq!(r.keys().collect::<Vec<_>>(), ["overall", "sharpness", "color_fidelity"]);
        for scores in r.values() {
            assert_eq!(scores.len(), 15);
            assert!(scores.iter().all(|&s| s == 5.0));
        }
    }

    #[test]
    fn zero_noise_gives_identical_raters() {
        let doc = render_document(2, (96, 96)).unwrap();
        let blurred = imageops::blur(&doc.image, 1.5);
        let r = synthesize_ratings(&blurred, &doc.image, &quiet(), 1).unwrap();
        for scores in r.values() {
            assert!(scores.iter().all(|&s| s == scores[0]));
            assert!(scores[0] < 5.0);
        }
    }

    #[test]
    fn heavier_blur_scores_lower_sharpness() {
        let doc = render_document(4, (128, 128)).unwrap();
        let cfg = SimulatedRatingConfig::default();
        for seed in 0..5 {
            let light = imageproc::filter::gaussian_blur_f32(&doc.image, 0.8);
            let heavy = imageproc::filter::gaussian_blur_f32(&doc.image, 2.5);
            let mean = |img: &RgbImage| {
                let r = synthesize_ratings(img, &doc.image, &cfg, seed).unwrap();
                r["sharpness"].iter().sum::<f64>() / 15.0
            };
            assert!(mean(&heavy) < mean(&light));
        }
        // the latent statistic itself is monotone in the blur radius
        let mut last = f64::INFINITY;
        for step in 1..=8 {
            let img = imageproc::filter::gaussian_blur_f32(&doc.image, 0.4 * step as f32);
            let q = latent_quality("sharpness", &img, &doc.image).unwrap();
            assert!(q < last, "step {step}: {q} !< {last}");
            last = q;
        }
    }

    #[test]
    fn scores_stay_in_range_and_are_seeded() {
        let doc = render_document(5, (96, 96)).unwrap();
        let cfg = SimulatedRatingConfig {
            rater_noise_sd: 2.0,
            rater_bias_sd: 2.0,
            ..Default::default()
        };
        let a = synthesize_ratings(&doc.image, &doc.image, &cfg, 9).unwrap();
        let b = synthesize_ratings(&doc.image, &doc.image, &cfg, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.values().flatten().all(|s| (1.0..=5.0).contains(s)));
    }

    #[test]
    fn errors() {
        let a = RgbImage::new(10, 10);
        let b = RgbImage::new(10, 12);
        assert!(synthesize_ratings(&a, &b, &quiet(), 0).is_err());
        let cfg = SimulatedRatingConfig {
            rater_count: 2,
            ..Default::default()
        };
        assert!(synthesize_ratings(&a, &a, &cfg, 0).is_err());
        let cfg = SimulatedRatingConfig {
            score_range: (5.0, 1.0),
            ..Default::default()
        };
        assert!(synthesize_ratings(&a, &a, &cfg, 0).is_err());
    }
}
