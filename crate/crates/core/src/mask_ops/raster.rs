use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, ImageFormat, Luma, RgbImage};
use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Planar image with intensities in `[0, 1]`, laid out as (channel, row, column).
///
/// Only 1-channel (grayscale) and 3-channel (RGB) images are supported. Zero is
/// black, which is also the value used for masked, padded and occluded pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pixels: Array3<f32>,
}

impl Image {
    pub fn new(pixels: Array3<f32>) -> Result<Self> {
        let (c, h, w) = pixels.dim();
        if c != 1 && c != 3 {
            return Err(Error::InvalidImage(format!(
                "expected 1 or 3 channels, got {c}"
            )));
        }
        if h == 0 || w == 0 {
            return Err(Error::InvalidImage(format!("zero-sized image {h}x{w}")));
        }
        Ok(Self { pixels })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(Array3::zeros((channels, height, width)))
    }

    pub fn from_gray(gray: Array2<f32>) -> Result<Self> {
        Self::new(gray.insert_axis(Axis(0)))
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }

    /// (height, width)
    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn pixels(&self) -> &Array3<f32> {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut Array3<f32> {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Array3<f32> {
        self.pixels
    }

    pub fn channel(&self, c: usize) -> ArrayView2<'_, f32> {
        self.pixels.index_axis(Axis(0), c)
    }

    /// Mean over channels, used wherever a single intensity plane is needed.
    pub fn luminance(&self) -> Array2<f32> {
        self.pixels
            .mean_axis(Axis(0))
            .expect("image has at least one channel")
    }

    pub fn from_dynamic(img: &DynamicImage) -> Result<Self> {
        match img {
            DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
                let gray = img.to_luma8();
                let (w, h) = gray.dimensions();
                let plane = Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
                    gray.get_pixel(c as u32, r as u32)[0] as f32 / 255.0
                });
                Self::from_gray(plane)
            }
            _ => {
                let rgb = img.to_rgb8();
                let (w, h) = rgb.dimensions();
                let pixels = Array3::from_shape_fn((3, h as usize, w as usize), |(ch, r, c)| {
                    rgb.get_pixel(c as u32, r as u32)[ch] as f32 / 255.0
                });
                Self::new(pixels)
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        Self::from_dynamic(&img)
    }

    /// Quantizes to 8 bits per channel.
    pub fn to_dynamic(&self) -> DynamicImage {
        let (h, w) = self.dims();
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        if self.channels() == 1 {
            let plane = self.channel(0);
            DynamicImage::ImageLuma8(GrayImage::from_fn(w as u32, h as u32, |x, y| {
                Luma([q(plane[[y as usize, x as usize]])])
            }))
        } else {
            DynamicImage::ImageRgb8(RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let (r, c) = (y as usize, x as usize);
                image::Rgb([
                    q(self.pixels[[0, r, c]]),
                    q(self.pixels[[1, r, c]]),
                    q(self.pixels[[2, r, c]]),
                ])
            }))
        }
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        encode_png(&self.to_dynamic())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_png_bytes()?)
    }
}

pub(crate) fn plane_to_buffer(plane: ArrayView2<'_, f32>) -> ImageBuffer<Luma<f32>, Vec<f32>> {
    let (h, w) = plane.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([plane[[y as usize, x as usize]]]))
}

pub(crate) fn buffer_to_plane(buf: &ImageBuffer<Luma<f32>, Vec<f32>>) -> Array2<f32> {
    let (w, h) = buf.dimensions();
    Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
        buf.get_pixel(c as u32, r as u32)[0]
    })
}

pub(crate) fn encode_png(img: &DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
