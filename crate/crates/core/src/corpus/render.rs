use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{LayoutClass, LayoutMask};
use crate::seed::rng_for;
use crate::{Error, Result};

pub const MIN_PAGE_SIDE: usize = 64;

const PAPER: Rgb<u8> = Rgb([250, 250, 247]);

/// A clean rendered page and its layout labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDocument {
    pub image: RgbImage,
    pub mask: LayoutMask,
    pub seed: u64,
}

struct Page<'a> {
    img: &'a mut RgbImage,
    rng: ChaCha8Rng,
}

impl Page<'_> {
    fn rect(&mut self, x0: u32, y0: u32, x1: u32, y1: u32, color: Rgb<u8>) {
        let (w, h) = self.img.dimensions();
        for y in y0..y1.min(h) {
            for x in x0..x1.min(w) {
                self.img.put_pixel(x, y, color);
            }
        }
    }

    fn ink(&mut self) -> Rgb<u8> {
        let v = self.rng.gen_range(15..70);
        Rgb([v, v, v.saturating_add(self.rng.gen_range(0..12))])
    }

    /// One line of word-like dark runs between `x0..x1`.
    fn text_line(&mut self, x0: u32, x1: u32, y: u32, height: u32, ragged: bool) {
        let glyph = (height / 2).max(2);
        let end = if ragged {
            x0 + (x1 - x0) * self.rng.gen_range(35..90) / 100
        } else {
            x1
        };
        let ink = self.ink();
        let mut x = x0;
        while x < end {
            let word = glyph * self.rng.gen_range(2..7);
            let stop = (x + word).min(end);
            // glyph columns with 1px gaps so text carries real edges
            let mut gx = x;
            while gx < stop {
                let asc = self.rng.gen_range(0..=height / 4);
                let top = y + height / 4 - asc.min(height / 4);
                let gw = self.rng.gen_range(1..=glyph.max(2) - 1);
                self.rect(gx, top, (gx + gw).min(stop), y + height, ink);
                gx += gw + 1;
            }
            x = stop + glyph + self.rng.gen_range(0..glyph);
        }
    }

    fn text_block(&mut self, x0: u32, x1: u32, y0: u32, lines: u32, line_h: u32) {
        for i in 0..lines {
            let y = y0 + i * line_h * 2;
            self.text_line(x0, x1, y, line_h, i + 1 == lines);
        }
    }

    fn table(&mut self, x0: u32, x1: u32, y0: u32, rows: u32, row_h: u32) {
        let cols = self.rng.gen_range(2..6);
        let col_w = (x1 - x0) / cols;
        let ink = self.ink();
        let y1 = y0 + rows * row_h;
        if self.rng.gen_bool(0.5) {
            // shaded header row
            let shade = self.rng.gen_range(200..235);
            self.rect(x0, y0, x0 + col_w * cols, y0 + row_h, Rgb([shade, shade, 240]));
        }
        for r in 0..=rows {
            let y = y0 + r * row_h;
            self.rect(x0, y, x0 + col_w * cols + 1, y + 1, ink);
        }
        for c in 0..=cols {
            let x = x0 + c * col_w;
            self.rect(x, y0, x + 1, y1 + 1, ink);
        }
        let glyph_h = (row_h / 3).max(2);
        for r in 0..rows {
            for c in 0..cols {
                let cx0 = x0 + c * col_w + 3;
                let cx1 = x0 + (c + 1) * col_w;
                if cx1 > cx0 + 4 {
                    let cy = y0 + r * row_h + (row_h - glyph_h) / 2;
                    self.text_line(cx0, cx1 - 3, cy, glyph_h, true);
                }
            }
        }
    }

    fn figure(&mut self, x0: u32, x1: u32, y0: u32, y1: u32) {
        let base = Rgb([
            self.rng.gen_range(40..230),
            self.rng.gen_range(40..230),
            self.rng.gen_range(40..230),
        ]);
        let (w, h) = ((x1 - x0).max(1) as f32, (y1 - y0).max(1) as f32);
        let accent = Rgb([255 - base[0], 255 - base[1] / 2, base[2] / 2]);
        let cx = self.rng.gen_range(0.3..0.7) * w;
        let cy = self.rng.gen_range(0.3..0.7) * h;
        let r = self.rng.gen_range(0.15..0.35) * w.min(h);
        for y in y0..y1.min(self.img.height()) {
            for x in x0..x1.min(self.img.width()) {
                let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
                let t = fy / h;
                let mut p = [0u8; 3];
                for ch in 0..3 {
                    p[ch] = (base[ch] as f32 * (0.75 + 0.25 * t)).min(255.0) as u8;
                }
                if (fx - cx).powi(2) + (fy - cy).powi(2) < r * r {
                    p = accent.0;
                }
                self.img.put_pixel(x, y, Rgb(p));
            }
        }
    }
}

/// Render a white page with procedurally placed text blocks, ruled tables and
/// filled figures. Identical seeds give identical pages.
pub fn render_document(seed: u64, size: (usize, usize)) -> Result<SyntheticDocument> {
    let (height, width) = size;
    if height < MIN_PAGE_SIDE || width < MIN_PAGE_SIDE {
        return Err(Error::invalid(format!(
            "page size {height}x{width} below minimum {MIN_PAGE_SIDE}x{MIN_PAGE_SIDE}"
        )));
    }
    let mut img = RgbImage::from_pixel(width as u32, height as u32, PAPER);
    let mut mask = LayoutMask::background(height, width);
    let mut page = Page {
        img: &mut img,
        rng: rng_for(seed, "render"),
    };

    let (w, h) = (width as u32, height as u32);
    let margin = (w.min(h) / 14).max(4);
    let line_h = (h / 56).max(3);
    let bottom = h - margin;
    let mut y = margin;
    let mut first = true;
    while y + line_h * 3 < bottom {
        let roll: f32 = if first { 0.0 } else { page.rng.gen() };
        first = false;
        let space = bottom - y;
        if roll < 0.5 {
            let lines = page.rng.gen_range(2..7).min(space / (line_h * 2)).max(1);
            let indent = if page.rng.gen_bool(0.3) { margin } else { 0 };
            let x0 = margin + indent;
            let x1 = w - margin;
            page.text_block(x0, x1, y, lines, line_h);
            let y1 = y + lines * line_h * 2 - line_h;
            mask.fill_rect(y as usize, x0 as usize, y1 as usize, x1 as usize, LayoutClass::Text);
            y = y1 + line_h * 2;
        } else if roll < 0.75 {
            let row_h = line_h * 2 + line_h / 2;
            let rows = page.rng.gen_range(2..6).min(space / row_h);
            if rows < 2 {
                break;
            }
            let x0 = margin;
            let x1 = w - margin;
            page.table(x0, x1, y, rows, row_h);
            let y1 = y + rows * row_h + 1;
            mask.fill_rect(y as usize, x0 as usize, y1 as usize, x1 as usize, LayoutClass::Table);
            y = y1 + line_h * 2;
        } else {
            let fh = (page.rng.gen_range(h / 8..h / 4)).min(space);
            if fh < line_h * 3 {
                break;
            }
            let full = w - 2 * margin;
            let fw = if page.rng.gen_bool(0.5) { full } else { full / 2 };
            let x0 = margin + page.rng.gen_range(0..=(full - fw));
            page.figure(x0, x0 + fw, y, y + fh);
            mask.fill_rect(
                y as usize,
                x0 as usize,
                (y + fh) as usize,
                (x0 + fw) as usize,
                LayoutClass::Figure,
            );
            y += fh + line_h * 2;
        }
    }

    Ok(SyntheticDocument {
        image: img,
        mask,
        seed,
    })
}
