use ndarray::{Array1, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use super::backbone::FeaturePyramid;
use super::layers::{global_avg_pool, global_avg_pool_backward, join, Activation, Conv2d, ConvCache, Feature, Module};
use crate::{Error, Result};

/// Bottleneck block carrying stage i-1 to stage i's shape.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperBlock {
    pub compress: Conv2d,
    pub spatial: Conv2d,
    pub restore: Conv2d,
    pub activation: Activation,
}

pub struct HyperCache {
    convs: [ConvCache; 3],
    pre: [Feature; 3],
}

impl HyperBlock {
    pub fn new<R: Rng>(in_c: usize, out_c: usize, ratio: f64, act: Activation, rng: &mut R) -> Self {
        let mid = ((in_c as f64 * ratio).round() as usize).max(1);
        Self {
            compress: Conv2d::new(in_c, mid, 1, 1, 0, rng),
            spatial: Conv2d::new(mid, mid, 3, 2, 1, rng),
            restore: Conv2d::new(mid, out_c, 1, 1, 0, rng),
            activation: act,
        }
    }

    pub fn forward_train(&self, x: &Feature) -> (Feature, HyperCache) {
        let act = self.activation;
        let (z0, c0) = self.compress.forward_train(x);
        let (z1, c1) = self.spatial.forward_train(&act.forward(&z0));
        let (z2, c2) = self.restore.forward_train(&act.forward(&z1));
        let y = act.forward(&z2);
        (
            y,
            HyperCache {
                convs: [c0, c1, c2],
                pre: [z0, z1, z2],
            },
        )
    }

    pub fn backward(&self, cache: &HyperCache, grad: &Feature, grads: &mut HyperBlock) -> Feature {
        let act = self.activation;
        let g = act.backward(&cache.pre[2], grad);
        let g = self.restore.backward(&cache.convs[2], &g, &mut grads.restore, true).unwrap();
        let g = act.backward(&cache.pre[1], &g);
        let g = self.spatial.backward(&cache.convs[1], &g, &mut grads.spatial, true).unwrap();
        let g = act.backward(&cache.pre[0], &g);
        self.compress.backward(&cache.convs[0], &g, &mut grads.compress, true).unwrap()
    }
}

impl Module for HyperBlock {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        self.compress.visit(&join(prefix, "compress"), out);
        self.spatial.visit(&join(prefix, "spatial"), out);
        self.restore.visit(&join(prefix, "restore"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        self.compress.visit_mut(&join(prefix, "compress"), out);
        self.spatial.visit_mut(&join(prefix, "spatial"), out);
        self.restore.visit_mut(&join(prefix, "restore"), out);
    }
}

/// Progressive fusion from the highest-resolution stage to the last:
/// `g1 = s1`, `gi = hyper(g(i-1)) + si`, output `GAP(g4)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFusion {
    pub blocks: Vec<HyperBlock>,
}

pub struct FusionCache {
    blocks: Vec<HyperCache>,
    final_dim: (usize, usize, usize),
}

impl FeatureFusion {
    pub fn new<R: Rng>(channels: &[usize; 4], ratio: f64, act: Activation, rng: &mut R) -> Self {
        Self {
            blocks: (1..4)
                .map(|i| HyperBlock::new(channels[i - 1], channels[i], ratio, act, rng))
                .collect(),
        }
    }

    pub fn forward_train(&self, pyramid: &FeaturePyramid) -> Result<(Array1<f64>, FusionCache)> {
        if pyramid.stages.len() != self.blocks.len() + 1 {
            return Err(Error::invalid(format!(
                "pyramid has {} stages, fusion expects {}",
                pyramid.stages.len(),
                self.blocks.len() + 1
            )));
        }
        let mut g = pyramid.stages[0].clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let (h, c) = block.forward_train(&g);
            let stage = &pyramid.stages[i + 1];
            if h.dim() != stage.dim() {
                return Err(Error::invalid(format!(
                    "fused map {:?} does not match stage {} {:?}",
                    h.dim(),
                    i + 2,
                    stage.dim()
                )));
            }
            caches.push(c);
            g = h + stage;
        }
        Ok((
            global_avg_pool(&g),
            FusionCache {
                blocks: caches,
                final_dim: g.dim(),
            },
        ))
    }

    /// Gradients at each pyramid stage.
    pub fn backward(&self, cache: &FusionCache, grad: &Array1<f64>, grads: &mut FeatureFusion) -> Vec<Option<Feature>> {
        let mut out = vec![None; self.blocks.len() + 1];
        let mut g = global_avg_pool_backward(grad, cache.final_dim);
        for i in (0..self.blocks.len()).rev() {
            let prev = self.blocks[i].backward(&cache.blocks[i], &g, &mut grads.blocks[i]);
            out[i + 1] = Some(g);
            g = prev;
        }
        out[0] = Some(g);
        out
    }
}

impl Module for FeatureFusion {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("hyper{}", i + 1)), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("hyper{}", i + 1)), out);
        }
    }
}
