//! Capture distortions: shadow, occlusion, blur, creases and moire.

use std::f32::consts::PI;
use std::fmt;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use imageproc::drawing::draw_polygon_mut;
use imageproc::point::Point;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::imgops::{gaussian_blur, sample_bilinear, to_u8};
use crate::seed::rng_for;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    Shadow,
    Occlusion,
    Blur,
    Creases,
    Moire,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 5] = [
        DistortionKind::Shadow,
        DistortionKind::Occlusion,
        DistortionKind::Blur,
        DistortionKind::Creases,
        DistortionKind::Moire,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistortionKind::Shadow => "shadow",
            DistortionKind::Occlusion => "occlusion",
            DistortionKind::Blur => "blur",
            DistortionKind::Creases => "creases",
            DistortionKind::Moire => "moire",
        }
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DistortionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnsupportedDistortion(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    pub severity: f64,
    pub seed: u64,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, severity: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            kind,
            severity,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.severity) {
            return Err(Error::invalid(format!(
                "severity {} outside [0, 1]",
                self.severity
            )));
        }
        Ok(())
    }
}

/// Apply one capture distortion. Severity 0 returns the input unchanged.
pub fn apply_distortion(image: &RgbImage, spec: &DistortionSpec) -> Result<RgbImage> {
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::invalid("empty image"));
    }
    spec.validate()?;
    if spec.severity == 0.0 {
        return Ok(image.clone());
    }
    let mut rng = rng_for(spec.seed, spec.kind.name());
    let s = spec.severity as f32;
    Ok(match spec.kind {
        DistortionKind::Shadow => shadow(image, s, &mut rng),
        DistortionKind::Occlusion => occlusion(image, s, &mut rng),
        DistortionKind::Blur => blur(image, s, &mut rng),
        DistortionKind::Creases => creases(image, s, &mut rng),
        DistortionKind::Moire => moire(image, s, &mut rng),
    })
}

fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Smooth multiplicative luminance falloff along a random direction.
fn shadow(img: &RgbImage, s: f32, rng: &mut ChaCha8Rng) -> RgbImage {
    let theta = rng.gen_range(0.0..2.0 * PI);
    let (c, sn) = (theta.cos(), theta.sin());
    let centre = rng.gen_range(0.35..0.65f32);
    let soft = rng.gen_range(0.15..0.4f32);
    let depth = 0.75 * s;
    let tint = [1.0, rng.gen_range(1.0..1.08f32), rng.gen_range(1.0..1.2f32)];
    let (w, h) = (img.width() as f32, img.height() as f32);
    let mut out = img.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        let u = x as f32 / w - 0.5;
        let v = y as f32 / h - 0.5;
        let t = u * c + v * sn + 0.5;
        let shade = 1.0 - depth * smoothstep(centre - soft, centre + soft, t);
        for ch in 0..3 {
            p[ch] = to_u8(p[ch] as f32 * shade.powf(tint[ch]));
        }
    }
    out
}

/// Opaque random polygon covering roughly half the severity as area fraction.
fn occlusion(img: &RgbImage, s: f32, rng: &mut ChaCha8Rng) -> RgbImage {
    let (w, h) = (img.width() as f32, img.height() as f32);
    let n: usize = rng.gen_range(5..=8);
    let area = 0.5 * s * w * h;
    let radius = (2.0 * area / (n as f32 * (2.0 * PI / n as f32).sin())).sqrt();
    let cx = rng.gen_range(0.25..0.75) * w;
    let cy = rng.gen_range(0.25..0.75) * h;
    let phase = rng.gen_range(0.0..2.0 * PI);
    let mut pts: Vec<Point<i32>> = Vec::with_capacity(n);
    for i in 0..n {
        let a = phase + 2.0 * PI * (i as f32 + rng.gen_range(-0.25..0.25)) / n as f32;
        let r = radius * rng.gen_range(0.85..1.15);
        let p = Point::new((cx + r * a.cos()).round() as i32, (cy + r * a.sin()).round() as i32);
        if pts.last() != Some(&p) && pts.first() != Some(&p) {
            pts.push(p);
        }
    }
    let color = if rng.gen_bool(0.5) {
        // skin-like
        Rgb([
            rng.gen_range(185..225),
            rng.gen_range(135..170),
            rng.gen_range(110..145),
        ])
    } else {
        let v = rng.gen_range(30..90);
        Rgb([v, v, v + 10])
    };
    let mut out = img.clone();
    if pts.len() >= 3 {
        draw_polygon_mut(&mut out, &pts, color);
    }
    out
}

/// Gaussian defocus or linear motion blur, radius proportional to severity.
fn blur(img: &RgbImage, s: f32, rng: &mut ChaCha8Rng) -> RgbImage {
    if rng.gen_bool(0.5) {
        gaussian_blur(img, 0.3 + 3.5 * s)
    } else {
        let len = 1 + (14.0 * s).round() as usize;
        let angle = rng.gen_range(0.0..PI);
        motion_blur(img, len, angle)
    }
}

pub(crate) fn motion_blur(img: &RgbImage, len: usize, angle: f32) -> RgbImage {
    if len <= 1 {
        return img.clone();
    }
    let (dx, dy) = (angle.cos(), angle.sin());
    let half = (len - 1) as f32 / 2.0;
    let (w, h) = (img.width() as i32, img.height() as i32);
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let mut acc = [0.0f32; 3];
        for k in 0..len {
            let t = k as f32 - half;
            let sx = (x as f32 + t * dx).round() as i32;
            let sy = (y as f32 + t * dy).round() as i32;
            let p = img.get_pixel(sx.clamp(0, w - 1) as u32, sy.clamp(0, h - 1) as u32);
            for ch in 0..3 {
                acc[ch] += p[ch] as f32;
            }
        }
        Rgb(acc.map(|v| to_u8(v / len as f32)))
    })
}

/// Fold lines: a dark and a bright band with a small shear across the fold.
fn creases(img: &RgbImage, s: f32, rng: &mut ChaCha8Rng) -> RgbImage {
    let (w, h) = (img.width() as f32, img.height() as f32);
    let count = 1 + (s * 3.0).floor() as usize;
    let band = 1.0 + 4.0 * s;
    let shear = 0.5 + 2.5 * s;
    let folds: Vec<(f32, f32, f32, f32)> = (0..count)
        .map(|_| {
            let px = rng.gen_range(0.1..0.9) * w;
            let py = rng.gen_range(0.1..0.9) * h;
            let a = rng.gen_range(0.0..PI);
            // unit normal of the fold line
            (px, py, -a.sin(), a.cos())
        })
        .collect();
    let fill = Rgb([255, 255, 255]);
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let (mut sx, mut sy) = (x as f32, y as f32);
        let mut shade = 1.0f32;
        for &(px, py, nx, ny) in &folds {
            let d = (x as f32 - px) * nx + (y as f32 - py) * ny;
            let reach = 3.0 * band;
            if d.abs() < reach {
                let disp = shear * d.signum() * (1.0 - d.abs() / reach);
                sx -= nx * disp;
                sy -= ny * disp;
            }
            shade *= 1.0 - 0.4 * s * (-(d + band / 2.0).powi(2) / (band * band)).exp()
                + 0.15 * s * (-(d - band / 2.0).powi(2) / (band * band)).exp();
        }
        let p = sample_bilinear(img, sx, sy, fill);
        Rgb(p.0.map(|v| to_u8(v as f32 * shade)))
    })
}

/// Additive interference of two slightly detuned gratings, with per-channel
/// phase offsets for colour fringing.
fn moire(img: &RgbImage, s: f32, rng: &mut ChaCha8Rng) -> RgbImage {
    let f1 = rng.gen_range(0.18..0.32f32);
    let f2 = f1 * rng.gen_range(0.9..0.97f32);
    let a1 = rng.gen_range(0.0..PI);
    let a2 = a1 + rng.gen_range(0.03..0.12f32);
    let amp = 70.0 * s;
    let phase = [0.0, rng.gen_range(0.5..1.5f32), rng.gen_range(1.5..3.0f32)];
    let mut out = img.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        let (xf, yf) = (x as f32, y as f32);
        let g1 = 2.0 * PI * f1 * (xf * a1.cos() + yf * a1.sin());
        let g2 = 2.0 * PI * f2 * (xf * a2.cos() + yf * a2.sin());
        for ch in 0..3 {
            let v = (g1 + phase[ch]).sin() * (g2 + phase[ch]).sin();
            p[ch] = to_u8(p[ch] as f32 + amp * v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::imgops::{changed_fraction, luma_plane};
    use crate::corpus::render_document;

    fn page() -> RgbImage {
        render_document(3, (128, 128)).unwrap().image
    }

    /// Brute-force mean |laplacian| written independently of imgops.
    fn laplacian_energy(img: &RgbImage) -> f64 {
        let (w, h) = (img.width() as i64, img.height() as i64);
        let lum = |x: i64, y: i64| {
            let p = img.get_pixel(x as u32, y as u32);
            0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
        };
        let mut total = 0.0;
        let mut n = 0.0;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let l = lum(x - 1, y) + lum(x + 1, y) + lum(x, y - 1) + lum(x, y + 1) - 4.0 * lum(x, y);
                total += l.abs();
                n += 1.0;
            }
        }
        total / n
    }

    #[test]
    fn zero_severity_is_identity() {
        let img = page();
        for kind in DistortionKind::ALL {
            let out = apply_distortion(&img, &DistortionSpec::new(kind, 0.0, 9).unwrap()).unwrap();
            assert_eq!(out.as_raw(), img.as_raw(), "{kind}");
        }
    }

    #[test]
    fn preserves_dimensions_and_changes_pixels() {
        let img = RgbImage::from_fn(96, 80, |x, y| Rgb([(x * 2) as u8, (y * 3) as u8, 128]));
        for kind in DistortionKind::ALL {
            let out = apply_distortion(&img, &DistortionSpec::new(kind, 0.7, 4).unwrap()).unwrap();
            assert_eq!(out.dimensions(), img.dimensions());
            assert!(changed_fraction(&img, &out) > 0.0, "{kind} changed nothing");
        }
    }

    #[test]
    fn occlusion_area_band() {
        // measured changed fraction over seeds 0..50: 0.09..0.12
        let img = RgbImage::from_pixel(100, 100, Rgb([250, 250, 250]));
        for seed in 0..50 {
            let spec = DistortionSpec::new(DistortionKind::Occlusion, 0.2, seed).unwrap();
            let out = apply_distortion(&img, &spec).unwrap();
            let frac = changed_fraction(&img, &out);
            assert!((0.01..=0.40).contains(&frac), "seed {seed}: {frac}");
        }
    }

    #[test]
    fn blur_lowers_high_frequency_energy() {
        let img = page();
        for seed in 0..10 {
            let spec = DistortionSpec::new(DistortionKind::Blur, 0.5, seed).unwrap();
            let out = apply_distortion(&img, &spec).unwrap();
            assert!(laplacian_energy(&out) < laplacian_energy(&img));
        }
    }

    #[test]
    fn shadow_darkens_on_average() {
        let img = page();
        let out = apply_distortion(&img, &DistortionSpec::new(DistortionKind::Shadow, 0.8, 1).unwrap())
            .unwrap();
        let before: f32 = luma_plane(&img).iter().sum();
        let after: f32 = luma_plane(&out).iter().sum();
        assert!(after < before);
    }

    #[test]
    fn unknown_kind_and_bad_severity() {
        assert!(matches!("smudge".parse::<DistortionKind>(), Err(Error::UnsupportedDistortion(_))));
        assert_eq!("moire".parse::<DistortionKind>().unwrap(), DistortionKind::Moire);
        assert!(DistortionSpec::new(DistortionKind::Blur, 1.5, 0).is_err());
        let empty = RgbImage::new(0, 0);
        let spec = DistortionSpec::new(DistortionKind::Blur, 0.5, 0).unwrap();
        assert!(apply_distortion(&empty, &spec).is_err());
    }
}
