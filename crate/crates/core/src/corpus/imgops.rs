//! Small raster helpers shared by the distortion synthesizers, the pipeline
//! stages and the rating simulator.

use image::{Rgb, RgbImage};

/// Rec. 601 luma in [0, 255].
#[inline]
pub fn luma(p: &Rgb<u8>) -> f32 {
    0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32
}

/// Max minus min channel.
#[inline]
pub fn chroma(p: &Rgb<u8>) -> u8 {
    let hi = p[0].max(p[1]).max(p[2]);
    let lo = p[0].min(p[1]).min(p[2]);
    hi - lo
}

#[inline]
pub fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn luma_plane(img: &RgbImage) -> Vec<f32> {
    img.pixels().map(luma).collect()
}

/// Mean absolute 4-neighbour Laplacian of luma over interior pixels.
pub fn mean_abs_laplacian(img: &RgbImage) -> f64 {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w < 3 || h < 3 {
        return 0.0;
    }
    let l = luma_plane(img);
    let mut acc = 0.0f64;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = l[y * w + x];
            let lap = l[(y - 1) * w + x] + l[(y + 1) * w + x] + l[y * w + x - 1] + l[y * w + x + 1]
                - 4.0 * c;
            acc += lap.abs() as f64;
        }
    }
    acc / ((w - 2) * (h - 2)) as f64
}

pub fn gaussian_blur(img: &RgbImage, sigma: f32) -> RgbImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    imageproc::filter::gaussian_blur_f32(img, sigma)
}

/// Gaussian blur of a single float plane (separable, clamped borders).
pub fn blur_plane(plane: &[f32], width: usize, height: usize, sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f32 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.iter().map(|k| k / norm).collect();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0.0f32; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut s = 0.0;
            for (k, wgt) in kernel.iter().enumerate() {
                let sx = clamp(x as isize + k as isize - radius, width);
                s += wgt * plane[y * width + sx];
            }
            tmp[y * width + x] = s;
        }
    }
    let mut out = vec![0.0f32; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut s = 0.0;
            for (k, wgt) in kernel.iter().enumerate() {
                let sy = clamp(y as isize + k as isize - radius, height);
                s += wgt * tmp[sy * width + x];
            }
            out[y * width + x] = s;
        }
    }
    out
}

/// Bilinear sample with out-of-range coordinates replaced by `fill`.
pub fn sample_bilinear(img: &RgbImage, x: f32, y: f32, fill: Rgb<u8>) -> Rgb<u8> {
    let (w, h) = (img.width() as f32, img.height() as f32);
    if x < -0.5 || y < -0.5 || x > w - 0.5 || y > h - 0.5 {
        return fill;
    }
    let x = x.clamp(0.0, w - 1.0);
    let y = y.clamp(0.0, h - 1.0);
    let (x0, y0) = (x.floor() as u32, y.floor() as u32);
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let (fx, fy) = (x - x0 as f32, y - y0 as f32);
    let (a, b, c, d) = (
        img.get_pixel(x0, y0),
        img.get_pixel(x1, y0),
        img.get_pixel(x0, y1),
        img.get_pixel(x1, y1),
    );
    let mut out = [0u8; 3];
    for ch in 0..3 {
        let top = a[ch] as f32 * (1.0 - fx) + b[ch] as f32 * fx;
        let bot = c[ch] as f32 * (1.0 - fx) + d[ch] as f32 * fx;
        out[ch] = to_u8(top * (1.0 - fy) + bot * fy);
    }
    Rgb(out)
}

/// Geometric resampling: output pixel `(x, y)` reads input at `map(x, y)`.
pub fn remap<F>(img: &RgbImage, fill: Rgb<u8>, map: F) -> RgbImage
where
    F: Fn(f32, f32) -> (f32, f32),
{
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let (sx, sy) = map(x as f32, y as f32);
        sample_bilinear(img, sx, sy, fill)
    })
}

/// Apply a per-channel tone curve through a 256-entry lookup table.
pub fn apply_curve<F: Fn(f32) -> f32>(img: &RgbImage, curve: F) -> RgbImage {
    let lut: Vec<u8> = (0..256).map(|v| to_u8(curve(v as f32))).collect();
    let mut out = img.clone();
    for p in out.pixels_mut() {
        for ch in 0..3 {
            p[ch] = lut[p[ch] as usize];
        }
    }
    out
}

/// Fraction of pixels whose RGB value differs.
pub fn changed_fraction(a: &RgbImage, b: &RgbImage) -> f64 {
    let n = a.pixels().zip(b.pixels()).filter(|(p, q)| p != q).count();
    n as f64 / (a.width() as f64 * a.height() as f64)
}
