//! Minimal raster drawing for deterministic figures.

use font8x8::{UnicodeFonts, BASIC_FONTS, LATIN_FONTS};
use image::{DynamicImage, Rgb, RgbImage};

use crate::error::Result;
use crate::mask_ops::encode_png;

pub type Color = [u8; 3];

pub const WHITE: Color = [255, 255, 255];
pub const BLACK: Color = [0, 0, 0];
pub const GRID: Color = [220, 220, 220];
pub const BLUE: Color = [31, 119, 180];
pub const ORANGE: Color = [255, 127, 14];
pub const PALETTE: [Color; 6] = [
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

pub struct Canvas {
    img: RgbImage,
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            img: RgbImage::from_pixel(width, height, Rgb(WHITE)),
        }
    }

    pub fn width(&self) -> i64 {
        self.img.width() as i64
    }

    pub fn height(&self) -> i64 {
        self.img.height() as i64
    }

    pub fn blend(&mut self, x: i64, y: i64, color: Color, alpha: f32) {
        if x < 0 || y < 0 || x >= self.width() || y >= self.height() {
            return;
        }
        let p = self.img.get_pixel_mut(x as u32, y as u32);
        for c in 0..3 {
            let v = (1.0 - alpha) * p[c] as f32 + alpha * color[c] as f32;
            p[c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }

    pub fn set(&mut self, x: i64, y: i64, color: Color) {
        self.blend(x, y, color, 1.0);
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, color: Color) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.set(xx, yy, color);
            }
        }
    }

    pub fn stroke_rect(&mut self, x: i64, y: i64, w: i64, h: i64, color: Color) {
        self.line(x, y, x + w - 1, y, color, 1);
        self.line(x, y + h - 1, x + w - 1, y + h - 1, color, 1);
        self.line(x, y, x, y + h - 1, color, 1);
        self.line(x + w - 1, y, x + w - 1, y + h - 1, color, 1);
    }

    /// Bresenham line with a square pen of side `width`.
    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: Color, width: i64) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        let off = (width - 1) / 2;
        loop {
            self.fill_rect(x - off, y - off, width, width, color);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    /// 8×8 bitmap text; characters without a glyph render as '?'.
    pub fn text(&mut self, x: i64, y: i64, s: &str, color: Color) {
        for (i, ch) in s.chars().enumerate() {
            let glyph = BASIC_FONTS
                .get(ch)
                .or_else(|| LATIN_FONTS.get(ch))
                .or_else(|| BASIC_FONTS.get('?'))
                .expect("'?' has a glyph");
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..8 {
                    if bits >> col & 1 == 1 {
                        self.set(x + i as i64 * 8 + col, y + row as i64, color);
                    }
                }
            }
        }
    }

    pub fn text_centered(&mut self, cx: i64, y: i64, s: &str, color: Color) {
        let w = s.chars().count() as i64 * 8;
        self.text(cx - w / 2, y, s, color);
    }

    pub fn into_png(self) -> Result<Vec<u8>> {
        encode_png(&DynamicImage::ImageRgb8(self.img))
    }

    #[cfg(test)]
    fn pixel(&self, x: u32, y: u32) -> Color {
        self.img.get_pixel(x, y).0
    }
}

/// Sequential colormap (viridis anchors, linear interpolation); `t` in [0, 1].
pub fn colormap(t: f64) -> Color {
    const STOPS: [Color; 5] = [
        [68, 1, 84],
        [59, 82, 139],
        [33, 145, 140],
        [94, 201, 98],
        [253, 231, 37],
    ];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (STOPS[i][c] as f64 * (1.0 - f) + STOPS[i + 1][c] as f64 * f).round() as u8;
    }
    out
}

pub fn luma(c: Color) -> f64 {
    0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), [68, 1, 84]);
        assert_eq!(colormap(1.0), [253, 231, 37]);
        assert_eq!(colormap(2.0), colormap(1.0));
    }

    #[test]
    fn text_draws_pixels() {
        let mut c = Canvas::new(20, 10);
        c.text(0, 0, "±1", BLACK);
        let dark = (0..16).flat_map(|x| (0..8).map(move |y| (x, y))).filter(|&(x, y)| c.pixel(x, y) == BLACK).count();
        assert!(dark > 10);
    }

    #[test]
    fn line_endpoints_drawn() {
        let mut c = Canvas::new(10, 10);
        c.line(1, 1, 8, 5, BLUE, 1);
        assert_eq!(c.pixel(1, 1), BLUE);
        assert_eq!(c.pixel(8, 5), BLUE);
    }
}
