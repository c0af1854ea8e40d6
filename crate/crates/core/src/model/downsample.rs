use ndarray::{s, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use super::layers::{join, Activation, Conv2d, ConvCache, Feature, Module};
use super::ModelConfig;
use crate::corpus::LayoutMask;
use crate::{Error, Result};

/// A chain of stride-2 3x3 convolutions with activations between them.
#[derive(Clone, Debug, PartialEq)]
pub struct DownPath {
    pub convs: Vec<Conv2d>,
}

pub struct PathCache {
    convs: Vec<ConvCache>,
    pre: Vec<Feature>,
}

impl DownPath {
    fn new<R: Rng>(in_c: usize, out_c: usize, steps: usize, rng: &mut R) -> Self {
        let mut convs = Vec::with_capacity(steps);
        let mut c = in_c;
        for i in 0..steps {
            let next = (out_c >> (steps - 1 - i)).max(1);
            convs.push(Conv2d::new(c, next, 3, 2, 1, rng));
            c = next;
        }
        Self { convs }
    }

    fn forward_train(&self, x: &Feature, act: Activation) -> (Feature, PathCache) {
        let mut cache = PathCache {
            convs: Vec::with_capacity(self.convs.len()),
            pre: Vec::new(),
        };
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            let (z, c) = conv.forward_train(&h);
            cache.convs.push(c);
            if i + 1 < self.convs.len() {
                h = act.forward(&z);
                cache.pre.push(z);
            } else {
                h = z;
            }
        }
        (h, cache)
    }

    fn backward(&self, cache: &PathCache, grad: &Feature, grads: &mut DownPath, act: Activation) {
        let mut g = grad.clone();
        for i in (0..self.convs.len()).rev() {
            let gi = self.convs[i].backward(&cache.convs[i], &g, &mut grads.convs[i], i > 0);
            if let Some(gi) = gi {
                g = act.backward(&cache.pre[i - 1], &gi);
            }
        }
    }
}

impl Module for DownPath {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit(&join(prefix, &i.to_string()), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

/// Dual-path stem: the image alone, and the image concatenated with a
/// one-hot layout mask, each reduced by the downsample factor and summed.
#[derive(Clone, Debug, PartialEq)]
pub struct LayoutFusionDownsampler {
    pub primary: DownPath,
    /// Absent when layout fusion is ablated.
    pub secondary: Option<DownPath>,
    pub mask_classes: usize,
    pub activation: Activation,
}

pub struct DownCache {
    primary: PathCache,
    secondary: Option<PathCache>,
    merged: Feature,
}

impl LayoutFusionDownsampler {
    pub fn new<R: Rng>(config: &ModelConfig, rng: &mut R) -> Self {
        let steps = config.downsample_steps();
        let primary = DownPath::new(3, config.stem_channels, steps, rng);
        let secondary = config
            .layout_fusion
            .then(|| DownPath::new(3 + config.mask_classes, config.stem_channels, steps, rng));
        Self {
            primary,
            secondary,
            mask_classes: config.mask_classes,
            activation: config.activation,
        }
    }

    /// Image channels followed by the one-hot mask; a missing mask is all
    /// background.
    pub fn secondary_input(&self, image: &Feature, mask: Option<&LayoutMask>) -> Result<Feature> {
        let (_, h, w) = image.dim();
        let mut x = Feature::zeros((3 + self.mask_classes, h, w));
        x.slice_mut(s![0..3, .., ..]).assign(image);
        match mask {
            None => x.slice_mut(s![3, .., ..]).fill(1.0),
            Some(m) => {
                if (m.height(), m.width()) != (h, w) {
                    return Err(Error::invalid(format!(
                        "mask {}x{} not aligned with image {h}x{w}",
                        m.height(), m.width()
                    )));
                }
                for y in 0..h {
                    for xx in 0..w {
                        let c = m.get(y, xx) as usize;
                        if c >= self.mask_classes {
                            return Err(Error::invalid(format!(
                                "mask class {c} at ({y}, {xx}) outside 0..{}",
                                self.mask_classes
                            )));
                        }
                        x[(3 + c, y, xx)] = 1.0;
                    }
                }
            }
        }
        Ok(x)
    }

    pub fn forward_train(&self, image: &Feature, mask: Option<&LayoutMask>) -> Result<(Feature, DownCache)> {
        if image.dim().0 != 3 {
            return Err(Error::invalid(format!("image has {} channels, expected 3", image.dim().0)));
        }
        let (p, pc) = self.primary.forward_train(image, self.activation);
        let (merged, sc) = match &self.secondary {
            Some(path) => {
                let x = self.secondary_input(image, mask)?;
                let (q, qc) = path.forward_train(&x, self.activation);
                (p + &q, Some(qc))
            }
            None => {
                if let Some(m) = mask {
                    let (_, h, w) = image.dim();
                    if (m.height(), m.width()) != (h, w) {
                        return Err(Error::invalid("mask not aligned with image"));
                    }
                }
                (p, None)
            }
        };
        let out = self.activation.forward(&merged);
        Ok((
            out,
            DownCache {
                primary: pc,
                secondary: sc,
                merged,
            },
        ))
    }

    pub fn forward(&self, image: &Feature, mask: Option<&LayoutMask>) -> Result<Feature> {
        Ok(self.forward_train(image, mask)?.0)
    }

    pub fn backward(&self, cache: &DownCache, grad: &Feature, grads: &mut LayoutFusionDownsampler) {
        let g = self.activation.backward(&cache.merged, grad);
        self.primary.backward(&cache.primary, &g, &mut grads.primary, self.activation);
        if let (Some(path), Some(c), Some(gp)) = (&self.secondary, &cache.secondary, grads.secondary.as_mut()) {
            path.backward(c, &g, gp, self.activation);
        }
    }
}

impl Module for LayoutFusionDownsampler {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        self.primary.visit(&join(prefix, "primary"), out);
        if let Some(s) = &self.secondary {
            s.visit(&join(prefix, "secondary"), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        self.primary.visit_mut(&join(prefix, "primary"), out);
        if let Some(s) = &mut self.secondary {
            s.visit_mut(&join(prefix, "secondary"), out);
        }
    }
}
