use image::RgbImage;
use ndarray::{Array1, ArrayViewD, ArrayViewMutD};

use super::backbone::{Backbone, BackboneCache, FeaturePyramid};
use super::downsample::{DownCache, LayoutFusionDownsampler};
use super::fusion::{FeatureFusion, FusionCache};
use super::heads::{HeadCache, QualityHeads, ScoreGrad, ScorePrediction};
use super::layers::{global_avg_pool, global_avg_pool_backward, Conv2d, ConvCache, Feature, Module};
use super::ModelConfig;
use crate::corpus::LayoutMask;
use crate::seed::rng_for;
use crate::{Error, Result};

/// RGB bytes to a `(3, H, W)` map in [0, 1].
pub fn image_tensor(img: &RgbImage) -> Feature {
    let (w, h) = img.dimensions();
    Feature::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocIq {
    config: ModelConfig,
    pub downsampler: LayoutFusionDownsampler,
    /// 1x1 channel alignment between the downsampler and the backbone.
    pub stem_projection: Option<Conv2d>,
    pub backbone: Backbone,
    /// Absent when feature fusion is ablated.
    pub fusion: Option<FeatureFusion>,
    pub heads: QualityHeads,
}

pub struct ForwardCache {
    down: DownCache,
    stem: Option<ConvCache>,
    backbone: BackboneCache,
    fusion: Option<FusionCache>,
    last_stage_dim: (usize, usize, usize),
    heads: HeadCache,
}

impl DocIq {
    /// Randomly initialised network; weights are a pure function of `seed`.
    /// With `pretrained`, backbone weights then come from the cache.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let pretrained = config.pretrained;
        let mut model = Self::build(config, seed)?;
        if pretrained {
            super::checkpoint::load_pretrained_backbone(&mut model)?;
        }
        Ok(model)
    }

    pub(crate) fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, "model/init");
        let act = config.activation;
        let downsampler = LayoutFusionDownsampler::new(&config, &mut rng);
        let native = config.backbone.native_stem_channels();
        let stem_projection = config
            .needs_stem_projection()
            .then(|| Conv2d::new(config.stem_channels, native, 1, 1, 0, &mut rng));
        let backbone = Backbone::new(config.backbone, act, &mut rng);
        let channels = config.backbone.stage_channels();
        let fusion = config
            .feature_fusion
            .then(|| FeatureFusion::new(&channels, config.bottleneck_ratio, act, &mut rng));
        let heads = QualityHeads::new(
            channels[3],
            config.head_hidden,
            config.dimension_count(),
            config.head_outputs(),
            act,
            config.output_affine,
            &mut rng,
        );
        Ok(Self {
            config,
            downsampler,
            stem_projection,
            backbone,
            fusion,
            heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn named_params(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }

    /// Same structure with every parameter zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut p) in z.named_params_mut() {
            p.fill(0.0);
        }
        z
    }

    /// `self += other`, parameter by parameter.
    pub fn accumulate(&mut self, other: &DocIq) {
        for ((_, mut a), (_, b)) in self.named_params_mut().into_iter().zip(other.named_params()) {
            a += &b;
        }
    }

    pub fn scale_params(&mut self, k: f64) {
        for (_, mut p) in self.named_params_mut() {
            p *= k;
        }
    }

    fn check_input(&self, image: &Feature) -> Result<()> {
        let (c, h, w) = image.dim();
        let unit = self.config.total_stride();
        if c != 3 || h == 0 || w == 0 || h % unit != 0 || w % unit != 0 {
            return Err(Error::invalid(format!(
                "input {c}x{h}x{w} must be 3 channels with sides divisible by {unit}"
            )));
        }
        Ok(())
    }

    pub fn layout_fusion_downsample(&self, image: &Feature, mask: Option<&LayoutMask>) -> Result<Feature> {
        self.check_input(image)?;
        self.downsampler.forward(image, mask)
    }

    pub fn extract_pyramid(&self, stem: &Feature) -> Result<FeaturePyramid> {
        let x = self.project_stem(stem)?.0;
        Ok(self.backbone.forward_train(&x)?.0)
    }

    pub fn hyper_fuse(&self, pyramid: &FeaturePyramid) -> Result<Array1<f64>> {
        pyramid.validate(&self.config.backbone.stage_channels())?;
        Ok(self.pool(pyramid)?.0)
    }

    pub fn predict_scores(&self, global: &Array1<f64>) -> Result<ScorePrediction> {
        let expected = self.heads.shared.weight.ncols();
        if global.len() != expected {
            return Err(Error::invalid(format!(
                "global feature has length {}, expected {expected}",
                global.len()
            )));
        }
        Ok(self.heads.forward_train(global).0)
    }

    pub fn forward(&self, image: &Feature, mask: Option<&LayoutMask>) -> Result<ScorePrediction> {
        Ok(self.forward_train(image, mask)?.0)
    }

    fn project_stem(&self, stem: &Feature) -> Result<(Feature, Option<ConvCache>)> {
        match &self.stem_projection {
            Some(p) => {
                if stem.dim().0 != p.in_channels() {
                    return Err(Error::Config(format!(
                        "stem has {} channels, projection expects {}",
                        stem.dim().0,
                        p.in_channels()
                    )));
                }
                let (y, c) = p.forward_train(stem);
                Ok((y, Some(c)))
            }
            None => Ok((stem.clone(), None)),
        }
    }

    fn pool(&self, pyramid: &FeaturePyramid) -> Result<(Array1<f64>, Option<FusionCache>)> {
        match &self.fusion {
            Some(f) => {
                let (g, c) = f.forward_train(pyramid)?;
                Ok((g, Some(c)))
            }
            None => Ok((global_avg_pool(&pyramid.stages[3]), None)),
        }
    }

    pub fn forward_train(&self, image: &Feature, mask: Option<&LayoutMask>) -> Result<(ScorePrediction, ForwardCache)> {
        self.check_input(image)?;
        let (stem, down) = self.downsampler.forward_train(image, mask)?;
        let (x, stem_cache) = self.project_stem(&stem)?;
        let (pyramid, backbone) = self.backbone.forward_train(&x)?;
        let (global, fusion) = self.pool(&pyramid)?;
        let (pred, heads) = self.heads.forward_train(&global);
        Ok((
            pred,
            ForwardCache {
                down,
                stem: stem_cache,
                backbone,
                fusion,
                last_stage_dim: pyramid.stages[3].dim(),
                heads,
            },
        ))
    }

    /// Accumulate parameter gradients of one sample into `grads`, which must
    /// share this network's structure (see [`DocIq::zeros_like`]).
    pub fn backward(&self, cache: &ForwardCache, grad: &ScoreGrad, grads: &mut DocIq) {
        let g_global = self.heads.backward(&cache.heads, grad, &mut grads.heads);
        let stage_grads = match (&self.fusion, &cache.fusion, grads.fusion.as_mut()) {
            (Some(f), Some(c), Some(gf)) => f.backward(c, &g_global, gf),
            _ => vec![None, None, None, Some(global_avg_pool_backward(&g_global, cache.last_stage_dim))],
        };
        let g_x = self
            .backbone
            .backward(&cache.backbone, &stage_grads, &mut grads.backbone, true)
            .expect("input gradient requested");
        let g_stem = match (&self.stem_projection, &cache.stem, grads.stem_projection.as_mut()) {
            (Some(p), Some(c), Some(gp)) => p.backward(c, &g_x, gp, true).unwrap(),
            _ => g_x,
        };
        self.downsampler.backward(&cache.down, &g_stem, &mut grads.downsampler);
    }
}

impl Module for DocIq {
    fn visit<'a>(&'a self, _prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        self.downsampler.visit("downsampler", out);
        if let Some(p) = &self.stem_projection {
            p.visit("stem_projection", out);
        }
        self.backbone.visit("backbone", out);
        if let Some(f) = &self.fusion {
            f.visit("fusion", out);
        }
        self.heads.visit("heads", out);
    }

    fn visit_mut<'a>(&'a mut self, _prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        self.downsampler.visit_mut("downsampler", out);
        if let Some(p) = &mut self.stem_projection {
            p.visit_mut("stem_projection", out);
        }
        self.backbone.visit_mut("backbone", out);
        if let Some(f) = &mut self.fusion {
            f.visit_mut("fusion", out);
        }
        self.heads.visit_mut("heads", out);
    }
}
