//! Synthetic corpus construction.
//!
//! A corpus is built from procedurally rendered pages: each page is captured
//! through one of five distortions, pushed through the randomized enhancement
//! pipeline ten times, and every enhanced variant is scored by a simulated
//! rater panel against the clean page.

mod distort;
mod generate;
pub mod imgops;
mod pipeline;
mod ratings;
mod render;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use distort::{apply_distortion, DistortionKind, DistortionSpec};
pub use generate::{generate_corpus, CorpusConfig, CorpusMeta, CORPUS_META_FILE, MANIFEST_FILE};
pub use pipeline::{run_enhancement_pipeline, Choice, PipelineTrace, Stage, VARIANTS_PER_IMAGE};
pub use ratings::{latent_quality, synthesize_ratings, SimulatedRatingConfig};
pub use render::{render_document, SyntheticDocument, MIN_PAGE_SIDE};

/// Semantic region classes of a document page.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum LayoutClass {
    Background = 0,
    Text = 1,
    Table = 2,
    Figure = 3,
}

pub const LAYOUT_CLASSES: usize = 4;

/// Per-pixel layout labels, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayoutMask {
    height: usize,
    width: usize,
    classes: Vec<u8>,
}

impl LayoutMask {
    pub fn background(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            classes: vec![LayoutClass::Background as u8; height * width],
        }
    }

    pub fn from_raw(height: usize, width: usize, classes: Vec<u8>) -> Result<Self> {
        if classes.len() != height * width {
            return Err(Error::invalid(format!(
                "mask buffer has {} entries, expected {}x{}",
                classes.len(),
                height,
                width
            )));
        }
        Ok(Self {
            height,
            width,
            classes,
        })
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            height: img.height() as usize,
            width: img.width() as usize,
            classes: img.as_raw().clone(),
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_raw(self.width as u32, self.height as u32, self.classes.clone())
            .expect("buffer length matches dimensions")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.classes[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.classes
    }

    pub(crate) fn fill_rect(&mut self, y0: usize, x0: usize, y1: usize, x1: usize, class: LayoutClass) {
        for y in y0..y1.min(self.height) {
            let row = &mut self.classes[y * self.width..(y + 1) * self.width];
            for v in &mut row[x0.min(self.width)..x1.min(self.width)] {
                *v = class as u8;
            }
        }
    }

    pub fn max_class(&self) -> u8 {
        self.classes.iter().copied().max().unwrap_or(0)
    }

    /// Nearest-neighbour resample, used when images are resized for the model.
    pub fn resized(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut classes = Vec::with_capacity(height * width);
        for y in 0..height {
            let sy = (y * self.height) / height;
            for x in 0..width {
                let sx = (x * self.width) / width;
                classes.push(self.get(sy, sx));
            }
        }
        Self {
            height,
            width,
            classes,
        }
    }
}
