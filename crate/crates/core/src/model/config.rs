use serde::{Deserialize, Serialize};

use super::layers::Activation;
use crate::{Error, Result, DEFAULT_DIMENSIONS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// Bottleneck residual stages [3, 4, 6, 3], widths [256, 512, 1024, 2048].
    Large,
    /// One basic residual block per stage, widths [16, 32, 64, 128].
    Tiny,
}

impl BackboneKind {
    pub fn stage_channels(self) -> [usize; 4] {
        match self {
            BackboneKind::Large => [256, 512, 1024, 2048],
            BackboneKind::Tiny => [16, 32, 64, 128],
        }
    }

    pub fn stage_blocks(self) -> [usize; 4] {
        match self {
            BackboneKind::Large => [3, 4, 6, 3],
            BackboneKind::Tiny => [1, 1, 1, 1],
        }
    }

    /// Channel count the first stage expects from its stem.
    pub fn native_stem_channels(self) -> usize {
        match self {
            BackboneKind::Large => 64,
            BackboneKind::Tiny => 16,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::Large => "large",
            BackboneKind::Tiny => "tiny",
        }
    }
}

/// Component removals used by the ablation study.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    #[serde(default)]
    pub no_layout: bool,
    #[serde(default)]
    pub no_fusion: bool,
    #[serde(default)]
    pub no_multirater: bool,
}

impl Ablations {
    pub const FLAGS: [&'static str; 3] = ["no_layout", "no_fusion", "no_multirater"];

    /// Parse a comma-separated flag list such as `no_layout,no_fusion`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut out = Self::default();
        for flag in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match flag {
                "no_layout" => out.no_layout = true,
                "no_fusion" => out.no_fusion = true,
                "no_multirater" => out.no_multirater = true,
                other => return Err(Error::Config(format!("unknown ablation flag `{other}`"))),
            }
        }
        Ok(out)
    }

    /// The five configurations of the ablation table, in row order.
    pub fn table_rows() -> [(&'static str, Ablations); 5] {
        let a = |no_layout, no_fusion, no_multirater| Ablations {
            no_layout,
            no_fusion,
            no_multirater,
        };
        [
            ("full", a(false, false, false)),
            ("no_multirater", a(false, false, true)),
            ("no_layout", a(true, false, false)),
            ("no_fusion", a(false, true, false)),
            ("no_layout+no_fusion", a(true, true, false)),
        ]
    }

    pub fn label(&self) -> String {
        let on: Vec<&str> = [self.no_layout, self.no_fusion, self.no_multirater]
            .iter()
            .zip(Self::FLAGS)
            .filter(|(on, _)| **on)
            .map(|(_, f)| f)
            .collect();
        if on.is_empty() {
            "full".into()
        } else {
            on.join("+")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// (height, width)
    pub input_size: (usize, usize),
    pub mask_classes: usize,
    pub downsample_factor: usize,
    pub backbone: BackboneKind,
    pub pretrained: bool,
    pub dimensions: Vec<String>,
    pub raters: usize,
    pub bottleneck_ratio: f64,
    /// Channels leaving the layout downsampler (C0).
    pub stem_channels: usize,
    pub head_hidden: usize,
    pub activation: Activation,
    pub layout_fusion: bool,
    pub feature_fusion: bool,
    pub multi_rater: bool,
    /// Fixed `(offset, scale)` applied to raw head outputs.
    #[serde(default = "identity_affine")]
    pub output_affine: (f64, f64),
}

fn identity_affine() -> (f64, f64) {
    (0.0, 1.0)
}

impl ModelConfig {
    /// Desk-scale network: 256x256 input, tiny backbone.
    pub fn tiny() -> Self {
        Self {
            input_size: (256, 256),
            mask_classes: crate::corpus::LAYOUT_CLASSES,
            downsample_factor: 4,
            backbone: BackboneKind::Tiny,
            pretrained: false,
            dimensions: DEFAULT_DIMENSIONS.iter().map(|s| s.to_string()).collect(),
            raters: 15,
            bottleneck_ratio: 0.25,
            stem_channels: 16,
            head_hidden: 64,
            activation: Activation::Silu,
            layout_fusion: true,
            feature_fusion: true,
            multi_rater: true,
            output_affine: identity_affine(),
        }
    }

    /// Full-size network: 1600x1600 input, ResNet50-class backbone.
    pub fn large() -> Self {
        Self {
            input_size: (1600, 1600),
            backbone: BackboneKind::Large,
            stem_channels: 64,
            head_hidden: 512,
            activation: Activation::Relu,
            ..Self::tiny()
        }
    }

    pub fn with_input_size(mut self, h: usize, w: usize) -> Self {
        self.input_size = (h, w);
        self
    }

    /// Centre raw outputs on a score range: midpoint offset, half-width scale.
    pub fn with_score_range(mut self, (lo, hi): (f64, f64)) -> Self {
        self.output_affine = ((lo + hi) / 2.0, (hi - lo) / 2.0);
        self
    }

    pub fn with_ablations(mut self, a: Ablations) -> Self {
        self.layout_fusion = !a.no_layout;
        self.feature_fusion = !a.no_fusion;
        self.multi_rater = !a.no_multirater;
        self
    }

    pub fn ablations(&self) -> Ablations {
        Ablations {
            no_layout: !self.layout_fusion,
            no_fusion: !self.feature_fusion,
            no_multirater: !self.multi_rater,
        }
    }

    pub fn dimension_count(&self) -> usize {
        self.dimensions.len()
    }

    /// Outputs per dimension head: R, or 1 without multi-rater supervision.
    pub fn head_outputs(&self) -> usize {
        if self.multi_rater {
            self.raters
        } else {
            1
        }
    }

    /// Number of stride-2 convolutions in each downsampler path.
    pub fn downsample_steps(&self) -> usize {
        self.downsample_factor.trailing_zeros() as usize
    }

    /// Downsampling factor times the three stride-2 backbone stages.
    pub fn total_stride(&self) -> usize {
        self.downsample_factor * 8
    }

    pub fn needs_stem_projection(&self) -> bool {
        self.pretrained || self.stem_channels != self.backbone.native_stem_channels()
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.downsample_factor;
        if f < 2 || !f.is_power_of_two() {
            return Err(Error::Config(format!("downsample_factor {f} must be a power of two >= 2")));
        }
        let (h, w) = self.input_size;
        let unit = self.total_stride();
        if h == 0 || w == 0 || h % unit != 0 || w % unit != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} not divisible by the total stride {unit}"
            )));
        }
        if self.dimensions.is_empty() {
            return Err(Error::Config("at least one dimension required".into()));
        }
        if self.raters == 0 {
            return Err(Error::Config("at least one rater required".into()));
        }
        if self.mask_classes == 0 {
            return Err(Error::Config("mask_classes must be positive".into()));
        }
        if !(self.bottleneck_ratio > 0.0 && self.bottleneck_ratio <= 1.0) {
            return Err(Error::Config(format!("bottleneck_ratio {} outside (0, 1]", self.bottleneck_ratio)));
        }
        if self.stem_channels >> (self.downsample_steps() - 1) == 0 {
            return Err(Error::Config(format!(
                "stem_channels {} too small for {} downsampling steps",
                self.stem_channels,
                self.downsample_steps()
            )));
        }
        let (off, scale) = self.output_affine;
        if !off.is_finite() || !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Config(format!("bad output affine ({off}, {scale})")));
        }
        if self.head_hidden == 0 {
            return Err(Error::Config("head_hidden must be positive".into()));
        }
        Ok(())
    }
}
