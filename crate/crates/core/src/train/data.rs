use std::path::Path;

use image::imageops::{self, FilterType};
use ndarray::{s, Axis};
use rayon::prelude::*;

use super::RaterTargets;
use crate::corpus::LayoutMask;
use crate::ingest::DocumentSample;
use crate::model::{image_tensor, Feature};
use crate::{Error, Result};

/// One decoded sample at model resolution.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub id: String,
    pub origin_id: String,
    pub image: Feature,
    pub mask: Option<LayoutMask>,
    pub targets: RaterTargets,
}

impl TrainingSample {
    /// Horizontal mirror of image and mask.
    pub fn flipped(&self) -> Self {
        let image = self.image.slice(s![.., .., ..;-1]).to_owned();
        let mask = self.mask.as_ref().map(|m| {
            let (h, w) = (m.height(), m.width());
            let raw = m.as_slice();
            let flipped = (0..h * w).map(|i| raw[(i / w) * w + (w - 1 - i % w)]).collect();
            LayoutMask::from_raw(h, w, flipped).expect("same size")
        });
        Self {
            image,
            mask,
            ..self.clone()
        }
    }
}

/// Dimension names in manifest order and the widest rater panel.
pub fn dataset_shape(samples: &[DocumentSample]) -> Result<(Vec<String>, usize)> {
    let first = samples.first().ok_or_else(|| Error::NoData("empty manifest".into()))?;
    let dims: Vec<String> = first.dimensions().map(str::to_string).collect();
    if dims.is_empty() {
        return Err(Error::NoData(format!("{} has no score dimensions", first.image.display())));
    }
    let raters = samples
        .iter()
        .flat_map(|s| s.scores.values().map(Vec::len))
        .max()
        .unwrap_or(0);
    if raters == 0 {
        return Err(Error::NoData("no rater scores".into()));
    }
    Ok((dims, raters))
}

fn load_one(
    sample: &DocumentSample,
    base: &Path,
    (h, w): (usize, usize),
    dimensions: &[String],
    raters: usize,
) -> Result<TrainingSample> {
    let mut img = image::open(sample.image_path(base))?.to_rgb8();
    if img.dimensions() != (w as u32, h as u32) {
        img = imageops::resize(&img, w as u32, h as u32, FilterType::Triangle);
    }
    let mask = match sample.mask_path(base) {
        Some(p) => {
            let m = LayoutMask::from_gray(&image::open(p)?.to_luma8());
            Some(if (m.height(), m.width()) == (h, w) { m } else { m.resized(h, w) })
        }
        None => None,
    };
    Ok(TrainingSample {
        id: sample.image.display().to_string(),
        origin_id: sample.origin_id.clone(),
        image: image_tensor(&img),
        mask,
        targets: RaterTargets::from_sample(sample, dimensions, raters)?,
    })
}

/// Decode and resize every sample; paths resolve against `base`.
pub fn load_samples(
    samples: &[DocumentSample],
    base: &Path,
    input_size: (usize, usize),
    dimensions: &[String],
    raters: usize,
) -> Result<Vec<TrainingSample>> {
    samples
        .par_iter()
        .map(|s| load_one(s, base, input_size, dimensions, raters))
        .collect()
}

/// Ground-truth MOS per sample, `n x D`.
pub fn ground_truth(samples: &[TrainingSample]) -> ndarray::Array2<f64> {
    let d = samples.first().map_or(0, |s| s.targets.mos.len());
    let mut out = ndarray::Array2::zeros((samples.len(), d));
    for (mut row, s) in out.axis_iter_mut(Axis(0)).zip(samples) {
        row.assign(&s.targets.mos);
    }
    out
}
