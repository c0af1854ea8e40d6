//! Differentiable building blocks on `(channels, height, width)` feature maps.
//!
//! Every layer has a `forward_train` returning its output and a cache, and a
//! `backward` that accumulates parameter gradients into a same-shaped layer
//! and returns the gradient with respect to its input.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array, Array1, Array2, Array3, Array4, ArrayViewD, ArrayViewMutD, Axis, Dimension, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// One feature map, `(C, H, W)`.
pub type Feature = Array3<f64>;

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Named parameter traversal in a fixed order.
pub trait Module {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// `x * sigmoid(x)`; smooth, so finite differences are well behaved.
    Silu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
        }
    }

    pub fn forward<D: Dimension>(self, x: &Array<f64, D>) -> Array<f64, D> {
        x.mapv(|v| self.apply(v))
    }

    pub fn backward<D: Dimension>(self, pre: &Array<f64, D>, grad: &Array<f64, D>) -> Array<f64, D> {
        let mut out = grad.clone();
        Zip::from(&mut out).and(pre).for_each(|g, &p| *g *= self.derivative(p));
        out
    }
}

fn normal_init<R: Rng, D: Dimension, Sh: ndarray::ShapeBuilder<Dim = D>>(
    shape: Sh,
    std: f64,
    rng: &mut R,
) -> Array<f64, D> {
    let n = Normal::new(0.0, std).expect("finite std");
    Array::from_shape_simple_fn(shape, || n.sample(rng))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    /// `(out, in, k, k)`
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub stride: usize,
    pub padding: usize,
}

pub struct ConvCache {
    cols: Array2<f64>,
    input_dim: (usize, usize, usize),
}

impl Conv2d {
    /// He-normal weights, zero bias.
    pub fn new<R: Rng>(in_c: usize, out_c: usize, k: usize, stride: usize, padding: usize, rng: &mut R) -> Self {
        let std = (2.0 / (in_c * k * k) as f64).sqrt();
        Self {
            weight: normal_init((out_c, in_c, k, k), std, rng),
            bias: Array1::zeros(out_c),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().2
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &Feature) -> Array2<f64> {
        let (c, h, w) = x.dim();
        let k = self.kernel();
        let (s, p) = (self.stride, self.padding as isize);
        let (ho, wo) = self.out_hw(h, w);
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut cols = Array2::<f64>::zeros((c * k * k, ho * wo));
        let cs = cols.as_slice_mut().expect("fresh array");
        for ci in 0..c {
            let plane = &xs[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let dst = &mut cs[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * s + ki) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = (ox * s + kj) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                *o = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f64>, (c, h, w): (usize, usize, usize)) -> Feature {
        let k = self.kernel();
        let (s, p) = (self.stride, self.padding as isize);
        let (ho, wo) = self.out_hw(h, w);
        let mut x = Feature::zeros((c, h, w));
        let xs = x.as_slice_mut().expect("fresh array");
        let cs = cols.as_slice().expect("standard layout");
        for ci in 0..c {
            let plane = &mut xs[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let src = &cs[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * s + ki) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * s + kj) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    fn weight_matrix(&self) -> ndarray::ArrayView2<'_, f64> {
        let (o, i, k, _) = self.weight.dim();
        self.weight
            .view()
            .into_shape_with_order((o, i * k * k))
            .expect("standard layout weight")
    }

    pub fn forward_train(&self, x: &Feature) -> (Feature, ConvCache) {
        let (c, h, w) = x.dim();
        assert_eq!(c, self.in_channels(), "conv input channels");
        let (ho, wo) = self.out_hw(h, w);
        let cols = self.im2col(x);
        let mut out = self.weight_matrix().dot(&cols);
        for (mut row, &b) in out.axis_iter_mut(Axis(0)).zip(&self.bias) {
            row += b;
        }
        let out = out
            .into_shape_with_order((self.out_channels(), ho, wo))
            .expect("matmul output is contiguous");
        (
            out,
            ConvCache {
                cols,
                input_dim: (c, h, w),
            },
        )
    }

    pub fn forward(&self, x: &Feature) -> Feature {
        self.forward_train(x).0
    }

    /// Accumulate into `grads` and return the input gradient (skipped when
    /// `need_input` is false).
    pub fn backward(&self, cache: &ConvCache, grad_out: &Feature, grads: &mut Conv2d, need_input: bool) -> Option<Feature> {
        let o = self.out_channels();
        let g = grad_out.as_standard_layout();
        let g2 = g
            .view()
            .into_shape_with_order((o, g.len() / o))
            .expect("standard layout grad");
        let (_, i, k, _) = grads.weight.dim();
        {
            let mut gw = grads
                .weight
                .view_mut()
                .into_shape_with_order((o, i * k * k))
                .expect("standard layout weight");
            general_mat_mul(1.0, &g2, &cache.cols.t(), 1.0, &mut gw);
        }
        grads.bias += &g2.sum_axis(Axis(1));
        if !need_input {
            return None;
        }
        let dcols = self.weight_matrix().t().dot(&g2);
        Some(self.col2im(&dcols, cache.input_dim))
    }
}

impl Module for Conv2d {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        out.push((join(prefix, "weight"), self.weight.view().into_dyn()));
        out.push((join(prefix, "bias"), self.bias.view().into_dyn()));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        out.push((join(prefix, "weight"), self.weight.view_mut().into_dyn()));
        out.push((join(prefix, "bias"), self.bias.view_mut().into_dyn()));
    }
}

/// Per-channel scale and shift; holds folded batch-norm statistics for the
/// large backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAffine {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
}

impl ChannelAffine {
    pub fn identity(c: usize) -> Self {
        Self {
            scale: Array1::ones(c),
            shift: Array1::zeros(c),
        }
    }

    pub fn forward(&self, x: &Feature) -> Feature {
        let mut y = x.clone();
        for ((mut plane, &s), &b) in y.axis_iter_mut(Axis(0)).zip(&self.scale).zip(&self.shift) {
            plane.mapv_inplace(|v| v * s + b);
        }
        y
    }

    pub fn backward(&self, input: &Feature, grad: &Feature, grads: &mut ChannelAffine) -> Feature {
        let mut gx = grad.clone();
        for (c, mut plane) in gx.axis_iter_mut(Axis(0)).enumerate() {
            let g = grad.index_axis(Axis(0), c);
            let x = input.index_axis(Axis(0), c);
            grads.scale[c] += (&g * &x).sum();
            grads.shift[c] += g.sum();
            plane *= self.scale[c];
        }
        gx
    }
}

impl Module for ChannelAffine {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        out.push((join(prefix, "scale"), self.scale.view().into_dyn()));
        out.push((join(prefix, "shift"), self.shift.view().into_dyn()));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        out.push((join(prefix, "scale"), self.scale.view_mut().into_dyn()));
        out.push((join(prefix, "shift"), self.shift.view_mut().into_dyn()));
    }
}

/// Convolution optionally followed by a channel affine.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvUnit {
    pub conv: Conv2d,
    pub affine: Option<ChannelAffine>,
}

pub struct ConvUnitCache {
    conv: ConvCache,
    conv_out: Option<Feature>,
}

impl ConvUnit {
    pub fn new<R: Rng>(
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        affine: bool,
        rng: &mut R,
    ) -> Self {
        Self {
            conv: Conv2d::new(in_c, out_c, k, stride, k / 2, rng),
            affine: affine.then(|| ChannelAffine::identity(out_c)),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }

    pub fn forward_train(&self, x: &Feature) -> (Feature, ConvUnitCache) {
        let (z, conv) = self.conv.forward_train(x);
        match &self.affine {
            Some(a) => {
                let y = a.forward(&z);
                (
                    y,
                    ConvUnitCache {
                        conv,
                        conv_out: Some(z),
                    },
                )
            }
            None => (z, ConvUnitCache { conv, conv_out: None }),
        }
    }

    pub fn backward(&self, cache: &ConvUnitCache, grad: &Feature, grads: &mut ConvUnit, need_input: bool) -> Option<Feature> {
        let g = match (&self.affine, &cache.conv_out, grads.affine.as_mut()) {
            (Some(a), Some(z), Some(ga)) => a.backward(z, grad, ga),
            _ => grad.clone(),
        };
        self.conv.backward(&cache.conv, &g, &mut grads.conv, need_input)
    }
}

impl Module for ConvUnit {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        self.conv.visit(&join(prefix, "conv"), out);
        if let Some(a) = &self.affine {
            a.visit(&join(prefix, "affine"), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        self.conv.visit_mut(&join(prefix, "conv"), out);
        if let Some(a) = &mut self.affine {
            a.visit_mut(&join(prefix, "affine"), out);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `(out, in)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new<R: Rng>(in_f: usize, out_f: usize, gain: f64, rng: &mut R) -> Self {
        let std = gain / (in_f as f64).sqrt();
        Self {
            weight: normal_init((out_f, in_f), std, rng),
            bias: Array1::zeros(out_f),
        }
    }

    pub fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.weight.dot(x) + &self.bias
    }

    pub fn backward(&self, x: &Array1<f64>, grad: &Array1<f64>, grads: &mut Linear) -> Array1<f64> {
        let g2 = grad.view().insert_axis(Axis(1));
        let x2 = x.view().insert_axis(Axis(0));
        general_mat_mul(1.0, &g2, &x2, 1.0, &mut grads.weight);
        grads.bias += grad;
        self.weight.t().dot(grad)
    }
}

impl Module for Linear {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        out.push((join(prefix, "weight"), self.weight.view().into_dyn()));
        out.push((join(prefix, "bias"), self.bias.view().into_dyn()));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        out.push((join(prefix, "weight"), self.weight.view_mut().into_dyn()));
        out.push((join(prefix, "bias"), self.bias.view_mut().into_dyn()));
    }
}

pub fn global_avg_pool(x: &Feature) -> Array1<f64> {
    let (_, h, w) = x.dim();
    x.sum_axis(Axis(2)).sum_axis(Axis(1)) / (h * w) as f64
}

pub fn global_avg_pool_backward(grad: &Array1<f64>, dim: (usize, usize, usize)) -> Feature {
    let (c, h, w) = dim;
    let scale = 1.0 / (h * w) as f64;
    Feature::from_shape_fn((c, h, w), |(ci, _, _)| grad[ci] * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution.
    fn conv_naive(conv: &Conv2d, x: &Feature) -> Feature {
        let (c, h, w) = x.dim();
        let k = conv.kernel();
        let (ho, wo) = conv.out_hw(h, w);
        Feature::from_shape_fn((conv.out_channels(), ho, wo), |(o, oy, ox)| {
            let mut s = conv.bias[o];
            for ci in 0..c {
                for ki in 0..k {
                    for kj in 0..k {
                        let iy = (oy * conv.stride + ki) as isize - conv.padding as isize;
                        let ix = (ox * conv.stride + kj) as isize - conv.padding as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            s += conv.weight[(o, ci, ki, kj)] * x[(ci, iy as usize, ix as usize)];
                        }
                    }
                }
            }
            s
        })
    }

    fn rand_feature(rng: &mut ChaCha8Rng, dim: (usize, usize, usize)) -> Feature {
        normal_init(dim, 1.0, rng)
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(k, s, p, h, w) in &[(3, 1, 1, 7, 5), (3, 2, 1, 9, 8), (1, 1, 0, 4, 4), (1, 2, 0, 5, 7), (4, 4, 0, 8, 8)] {
            let mut conv = Conv2d::new(3, 4, k, s, p, &mut rng);
            conv.bias = normal_init(4, 1.0, &mut rng);
            let x = rand_feature(&mut rng, (3, h, w));
            let fast = conv.forward(&x);
            let slow = conv_naive(&conv, &x);
            assert_eq!(fast.dim(), slow.dim());
            assert!((&fast - &slow).iter().all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x) - b, g> = <x, conv^T g> for the input gradient
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::new(2, 3, 3, 2, 1, &mut rng);
        let x = rand_feature(&mut rng, (2, 9, 7));
        let (y, cache) = conv.forward_train(&x);
        let g = rand_feature(&mut rng, y.dim());
        let mut grads = conv.clone();
        grads.weight.fill(0.0);
        grads.bias.fill(0.0);
        let gx = conv.backward(&cache, &g, &mut grads, true).unwrap();
        let lhs = (&y * &g).sum() - (0..3).map(|o| conv.bias[o] * g.index_axis(Axis(0), o).sum()).sum::<f64>();
        let rhs = (&x * &gx).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        // and linear in the weights: <y - b, g> = <W, dW>
        let lw = (&conv.weight * &grads.weight).sum();
        assert!((lhs - lw).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn silu_derivative_matches_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (Activation::Silu.apply(x + h) - Activation::Silu.apply(x - h)) / (2.0 * h);
            assert!((fd - Activation::Silu.derivative(x)).abs() < 1e-8);
        }
        assert_eq!(Activation::Silu.apply(0.0), 0.0);
        assert_eq!(Activation::Relu.apply(0.0), 0.0);
    }

    #[test]
    fn pooling_round_trip() {
        let x = Feature::from_shape_fn((2, 3, 4), |(c, y, x)| (c * 12 + y * 4 + x) as f64);
        let p = global_avg_pool(&x);
        assert_eq!(p, Array1::from(vec![5.5, 17.5]));
        let g = global_avg_pool_backward(&Array1::from(vec![12.0, 24.0]), (2, 3, 4));
        assert!(g.index_axis(Axis(0), 0).iter().all(|&v| v == 1.0));
        assert!(g.index_axis(Axis(0), 1).iter().all(|&v| v == 2.0));
    }
}
