use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::layers::{join, Activation, Linear, Module};

/// Per-rater scores (`D x R`) and their row means.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorePrediction {
    pub per_rater: Array2<f64>,
    pub mos: Array1<f64>,
}

impl ScorePrediction {
    pub fn from_per_rater(per_rater: Array2<f64>) -> Self {
        let mos = per_rater.mean_axis(Axis(1)).expect("at least one rater");
        Self { per_rater, mos }
    }
}

/// Loss gradients with respect to both outputs of a prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreGrad {
    pub per_rater: Array2<f64>,
    pub mos: Array1<f64>,
}

/// Shared hidden layer followed by one linear head per dimension. Raw head
/// outputs are mapped through the fixed `offset + scale * x`.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityHeads {
    pub shared: Linear,
    pub heads: Vec<Linear>,
    pub activation: Activation,
    pub offset: f64,
    pub scale: f64,
}

pub struct HeadCache {
    input: Array1<f64>,
    pre: Array1<f64>,
    hidden: Array1<f64>,
}

impl QualityHeads {
    pub fn new<R: Rng>(
        in_f: usize,
        hidden: usize,
        dimensions: usize,
        outputs: usize,
        act: Activation,
        (offset, scale): (f64, f64),
        rng: &mut R,
    ) -> Self {
        Self {
            shared: Linear::new(in_f, hidden, 2f64.sqrt(), rng),
            heads: (0..dimensions).map(|_| Linear::new(hidden, outputs, 1.0, rng)).collect(),
            activation: act,
            offset,
            scale,
        }
    }

    pub fn forward_train(&self, x: &Array1<f64>) -> (ScorePrediction, HeadCache) {
        let pre = self.shared.forward(x);
        let hidden = self.activation.forward(&pre);
        let r = self.heads[0].bias.len();
        let mut per_rater = Array2::zeros((self.heads.len(), r));
        for (mut row, head) in per_rater.axis_iter_mut(Axis(0)).zip(&self.heads) {
            row.assign(&head.forward(&hidden).mapv(|v| self.offset + self.scale * v));
        }
        (
            ScorePrediction::from_per_rater(per_rater),
            HeadCache {
                input: x.clone(),
                pre,
                hidden,
            },
        )
    }

    pub fn backward(&self, cache: &HeadCache, grad: &ScoreGrad, grads: &mut QualityHeads) -> Array1<f64> {
        let r = grad.per_rater.ncols() as f64;
        let mut g_hidden = Array1::zeros(cache.hidden.len());
        for (d, head) in self.heads.iter().enumerate() {
            // mos is the row mean, so its gradient spreads evenly
            let g = (grad.per_rater.row(d).to_owned() + grad.mos[d] / r) * self.scale;
            g_hidden += &head.backward(&cache.hidden, &g, &mut grads.heads[d]);
        }
        let g_pre = self.activation.backward(&cache.pre, &g_hidden);
        self.shared.backward(&cache.input, &g_pre, &mut grads.shared)
    }
}

impl Module for QualityHeads {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        self.shared.visit(&join(prefix, "shared"), out);
        for (d, h) in self.heads.iter().enumerate() {
            h.visit(&join(prefix, &format!("dim{d}")), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        self.shared.visit_mut(&join(prefix, "shared"), out);
        for (d, h) in self.heads.iter_mut().enumerate() {
            h.visit_mut(&join(prefix, &format!("dim{d}")), out);
        }
    }
}
