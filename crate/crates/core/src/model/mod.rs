//! The quality network: layout fusion downsampler, residual backbone,
//! progressive hyper-block fusion and per-rater regression heads.
//!
//! All arithmetic is `f64` with hand-written backward passes.

mod backbone;
mod checkpoint;
mod config;
mod downsample;
mod fusion;
mod heads;
pub mod layers;
mod network;

pub use backbone::{Backbone, FeaturePyramid, ResidualBlock};
pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, load_pretrained_backbone, save_checkpoint,
    CACHE_ENV, FORMAT_VERSION,
};
pub use config::{Ablations, BackboneKind, ModelConfig};
pub use downsample::LayoutFusionDownsampler;
pub use fusion::{FeatureFusion, HyperBlock};
pub use heads::{QualityHeads, ScoreGrad, ScorePrediction};
pub use layers::{Activation, Feature};
pub use network::{image_tensor, DocIq, ForwardCache};
