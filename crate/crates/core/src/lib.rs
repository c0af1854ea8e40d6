//! Document image quality assessment: a layout-aware no-reference quality
//! network together with the tooling needed to train and evaluate it on a
//! synthetic multi-rater corpus.
//!
//! Module map:
//!
//! * [`corpus`]: procedural documents, capture distortions, the randomized
//!   enhancement pipeline and simulated rater panels.
//! * [`ingest`]: manifest loading, BT.500 rater screening, MOS aggregation and
//!   grouped train/test splits.
//! * [`metrics`]: PLCC and SRCC.
//! * [`model`]: the network (layout fusion downsampler, residual backbone,
//!   feature fusion, parallel quality heads) with hand-written backprop.
//! * [`train`]: loss, schedule, optimizer, training loop and evaluation.

pub mod corpus;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod train;

pub use error::{Error, Result};

/// The three rating dimensions collected per image, in reporting order.
pub const DEFAULT_DIMENSIONS: [&str; 3] = ["overall", "sharpness", "color_fidelity"];

/// Bumped whenever generated corpora stop being byte-compatible.
pub const GENERATOR_VERSION: &str = concat!("dociq-corpus/", env!("CARGO_PKG_VERSION"));
