use ndarray::{ArrayViewD, ArrayViewMutD};
use rand::Rng;

use super::layers::{join, Activation, ConvUnit, ConvUnitCache, Feature, Module};
use super::BackboneKind;
use crate::{Error, Result};

/// Residual block: a chain of conv units with activations between them,
/// plus an identity or projected shortcut, followed by a final activation.
/// Two 3x3 units make a basic block; 1x1, 3x3, 1x1 make a bottleneck.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub units: Vec<ConvUnit>,
    pub shortcut: Option<ConvUnit>,
    pub activation: Activation,
}

pub struct BlockCache {
    units: Vec<ConvUnitCache>,
    pre: Vec<Feature>,
    shortcut: Option<ConvUnitCache>,
    sum: Feature,
}

impl ResidualBlock {
    fn basic<R: Rng>(in_c: usize, out_c: usize, stride: usize, act: Activation, rng: &mut R) -> Self {
        Self {
            units: vec![
                ConvUnit::new(in_c, out_c, 3, stride, false, rng),
                ConvUnit::new(out_c, out_c, 3, 1, false, rng),
            ],
            shortcut: (in_c != out_c || stride != 1).then(|| ConvUnit::new(in_c, out_c, 1, stride, false, rng)),
            activation: act,
        }
    }

    fn bottleneck<R: Rng>(in_c: usize, out_c: usize, stride: usize, act: Activation, rng: &mut R) -> Self {
        let width = out_c / 4;
        let mut last = ConvUnit::new(width, out_c, 1, 1, true, rng);
        // residual branch starts as identity
        if let Some(a) = &mut last.affine {
            a.scale.fill(0.0);
        }
        Self {
            units: vec![
                ConvUnit::new(in_c, width, 1, 1, true, rng),
                ConvUnit::new(width, width, 3, stride, true, rng),
                last,
            ],
            shortcut: (in_c != out_c || stride != 1).then(|| ConvUnit::new(in_c, out_c, 1, stride, true, rng)),
            activation: act,
        }
    }

    pub fn forward_train(&self, x: &Feature) -> (Feature, BlockCache) {
        let mut units = Vec::with_capacity(self.units.len());
        let mut pre = Vec::with_capacity(self.units.len() - 1);
        let mut h = x.clone();
        for (i, u) in self.units.iter().enumerate() {
            let (z, c) = u.forward_train(&h);
            units.push(c);
            if i + 1 < self.units.len() {
                h = self.activation.forward(&z);
                pre.push(z);
            } else {
                h = z;
            }
        }
        let (sum, shortcut) = match &self.shortcut {
            Some(sc) => {
                let (s, c) = sc.forward_train(x);
                (h + &s, Some(c))
            }
            None => (h + x, None),
        };
        let y = self.activation.forward(&sum);
        (
            y,
            BlockCache {
                units,
                pre,
                shortcut,
                sum,
            },
        )
    }

    pub fn backward(&self, cache: &BlockCache, grad: &Feature, grads: &mut ResidualBlock, need_input: bool) -> Option<Feature> {
        let g_sum = self.activation.backward(&cache.sum, grad);
        let mut g = g_sum.clone();
        for i in (0..self.units.len()).rev() {
            let need = i > 0 || need_input;
            let gi = self.units[i].backward(&cache.units[i], &g, &mut grads.units[i], need);
            match gi {
                Some(gi) if i > 0 => g = self.activation.backward(&cache.pre[i - 1], &gi),
                Some(gi) => g = gi,
                None => {}
            }
        }
        let g_short = match (&self.shortcut, &cache.shortcut, grads.shortcut.as_mut()) {
            (Some(sc), Some(c), Some(gs)) => sc.backward(c, &g_sum, gs, need_input),
            _ => need_input.then_some(g_sum),
        };
        if !need_input {
            return None;
        }
        Some(g + &g_short.expect("input gradient requested"))
    }
}

impl Module for ResidualBlock {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        for (i, u) in self.units.iter().enumerate() {
            u.visit(&join(prefix, &format!("unit{i}")), out);
        }
        if let Some(s) = &self.shortcut {
            s.visit(&join(prefix, "shortcut"), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        for (i, u) in self.units.iter_mut().enumerate() {
            u.visit_mut(&join(prefix, &format!("unit{i}")), out);
        }
        if let Some(s) = &mut self.shortcut {
            s.visit_mut(&join(prefix, "shortcut"), out);
        }
    }
}

/// Multi-scale outputs of the four backbone stages.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub stages: Vec<Feature>,
}

impl FeaturePyramid {
    /// Check halving spatial sizes and the expected channel counts.
    pub fn validate(&self, channels: &[usize; 4]) -> Result<()> {
        if self.stages.len() != 4 {
            return Err(Error::invalid(format!("pyramid has {} stages, expected 4", self.stages.len())));
        }
        for (i, s) in self.stages.iter().enumerate() {
            let (c, h, w) = s.dim();
            if c != channels[i] {
                return Err(Error::invalid(format!("stage {} has {c} channels, expected {}", i + 1, channels[i])));
            }
            if i > 0 {
                let (_, ph, pw) = self.stages[i - 1].dim();
                if (h, w) != (ph.div_ceil(2), pw.div_ceil(2)) {
                    return Err(Error::invalid(format!(
                        "stage {} is {h}x{w}, expected half of {ph}x{pw}",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub kind: BackboneKind,
    pub stages: Vec<Vec<ResidualBlock>>,
}

pub struct BackboneCache {
    blocks: Vec<Vec<BlockCache>>,
}

impl Backbone {
    pub fn new<R: Rng>(kind: BackboneKind, act: Activation, rng: &mut R) -> Self {
        let mut in_c = kind.native_stem_channels();
        let mut stages = Vec::with_capacity(4);
        for (i, (&out_c, &n)) in kind.stage_channels().iter().zip(&kind.stage_blocks()).enumerate() {
            let mut blocks = Vec::with_capacity(n);
            for b in 0..n {
                let stride = if i > 0 && b == 0 { 2 } else { 1 };
                blocks.push(match kind {
                    BackboneKind::Tiny => ResidualBlock::basic(in_c, out_c, stride, act, rng),
                    BackboneKind::Large => ResidualBlock::bottleneck(in_c, out_c, stride, act, rng),
                });
                in_c = out_c;
            }
            stages.push(blocks);
        }
        Self { kind, stages }
    }

    pub fn input_channels(&self) -> usize {
        self.kind.native_stem_channels()
    }

    pub fn forward_train(&self, x: &Feature) -> Result<(FeaturePyramid, BackboneCache)> {
        if x.dim().0 != self.input_channels() {
            return Err(Error::Config(format!(
                "backbone expects {} stem channels, got {}",
                self.input_channels(),
                x.dim().0
            )));
        }
        let mut h = x.clone();
        let mut outs = Vec::with_capacity(4);
        let mut caches = Vec::with_capacity(4);
        for stage in &self.stages {
            let mut sc = Vec::with_capacity(stage.len());
            for block in stage {
                let (y, c) = block.forward_train(&h);
                sc.push(c);
                h = y;
            }
            outs.push(h.clone());
            caches.push(sc);
        }
        Ok((FeaturePyramid { stages: outs }, BackboneCache { blocks: caches }))
    }

    /// `stage_grads[i]` is the loss gradient at stage i's output, if any.
    pub fn backward(
        &self,
        cache: &BackboneCache,
        stage_grads: &[Option<Feature>],
        grads: &mut Backbone,
        need_input: bool,
    ) -> Option<Feature> {
        let mut g: Option<Feature> = None;
        for s in (0..self.stages.len()).rev() {
            g = match (g, &stage_grads[s]) {
                (Some(a), Some(b)) => Some(a + b),
                (Some(a), None) => Some(a),
                (None, Some(b)) => Some(b.clone()),
                (None, None) => None,
            };
            let Some(mut cur) = g.take() else { continue };
            for b in (0..self.stages[s].len()).rev() {
                let need = need_input || s > 0 || b > 0;
                cur = self.stages[s][b].backward(&cache.blocks[s][b], &cur, &mut grads.stages[s][b], need)?;
            }
            g = Some(cur);
        }
        g
    }
}

impl Module for Backbone {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        for (s, stage) in self.stages.iter().enumerate() {
            for (b, block) in stage.iter().enumerate() {
                block.visit(&join(prefix, &format!("stage{}.{b}", s + 1)), out);
            }
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        for (s, stage) in self.stages.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                block.visit_mut(&join(prefix, &format!("stage{}.{b}", s + 1)), out);
            }
        }
    }
}
