use image::imageops::{self, FilterType};
use ndarray::{s, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::mask::BinaryMask;
use super::raster::{buffer_to_plane, plane_to_buffer, Image};
use crate::error::{Error, Result};

pub const DEFAULT_TARGET_SIZE: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Side length of the square output.
    pub target_size: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_size: DEFAULT_TARGET_SIZE,
        }
    }
}

/// Geometry of the aspect-preserving resize followed by centered black padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResizePlan {
    pub content_height: usize,
    pub content_width: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub target: usize,
}

impl ResizePlan {
    /// The longest side is scaled to `target`; the other side is scaled by the
    /// same factor and truncated. Odd padding residue goes to the bottom/right.
    pub fn new(height: usize, width: usize, target: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!("zero-sized image {height}x{width}")));
        }
        if target == 0 {
            return Err(Error::InvalidArgument("target size must be positive".into()));
        }
        let long = height.max(width);
        let scale = |side: usize| ((side * target) / long).max(1);
        let (content_height, content_width) = (scale(height), scale(width));
        Ok(Self {
            content_height,
            content_width,
            pad_top: (target - content_height) / 2,
            pad_left: (target - content_width) / 2,
            target,
        })
    }
}

/// Resizes to a `target_size` square, preserving aspect ratio with black
/// padding. Output intensities stay in `[0, 1]`; per-channel standardization
/// is part of the model input stage.
pub fn preprocess(raw: &Image, config: &PreprocessConfig) -> Result<Image> {
    let (h, w) = raw.dims();
    let plan = ResizePlan::new(h, w, config.target_size)?;
    let mut out = Array3::<f32>::zeros((raw.channels(), plan.target, plan.target));
    for (c, mut dst) in out.axis_iter_mut(Axis(0)).enumerate() {
        let src = raw.channel(c);
        let resized = if (plan.content_height, plan.content_width) == (h, w) {
            src.to_owned()
        } else {
            let buf = imageops::resize(
                &plane_to_buffer(src),
                plan.content_width as u32,
                plan.content_height as u32,
                FilterType::Triangle,
            );
            buffer_to_plane(&buf)
        };
        dst.slice_mut(s![
            plan.pad_top..plan.pad_top + plan.content_height,
            plan.pad_left..plan.pad_left + plan.content_width
        ])
        .assign(&resized.mapv(|v| v.clamp(0.0, 1.0)));
    }
    Image::new(out)
}

/// The same geometric transform as [`preprocess`], with nearest-neighbour
/// sampling so the mask stays binary and aligned with its image.
pub fn preprocess_mask(mask: &BinaryMask, config: &PreprocessConfig) -> Result<BinaryMask> {
    let (h, w) = mask.dims();
    let plan = ResizePlan::new(h, w, config.target_size)?;
    let resized = if (plan.content_height, plan.content_width) == (h, w) {
        mask.clone()
    } else {
        let buf = imageops::resize(
            &mask.to_gray(),
            plan.content_width as u32,
            plan.content_height as u32,
            FilterType::Nearest,
        );
        BinaryMask::from_gray(&buf)
    };
    Ok(BinaryMask::from_fn(plan.target, plan.target, |(r, c)| {
        let inside = r >= plan.pad_top
            && r < plan.pad_top + plan.content_height
            && c >= plan.pad_left
            && c < plan.pad_left + plan.content_width;
        inside && resized.get(r - plan.pad_top, c - plan.pad_left)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn tall_image_is_resized_and_padded_symmetrically() {
        let plan = ResizePlan::new(1024, 512, 512).unwrap();
        assert_eq!((plan.content_height, plan.content_width), (512, 256));
        assert_eq!((plan.pad_top, plan.pad_left), (0, 128));

        let img = Image::from_gray(Array2::from_elem((1024, 512), 0.5)).unwrap();
        let out = preprocess(&img, &PreprocessConfig::default()).unwrap();
        assert_eq!(out.dims(), (512, 512));
        let px = out.channel(0);
        assert_eq!(px[[100, 127]], 0.0);
        assert_eq!(px[[100, 384]], 0.0);
        assert!((px[[100, 128]] - 0.5).abs() < 1e-6);
        assert!((px[[100, 383]] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn square_input_is_geometric_noop() {
        let plane = Array2::from_shape_fn((512, 512), |(r, c)| ((r * 3 + c * 7) % 256) as f32 / 255.0);
        let img = Image::from_gray(plane).unwrap();
        let out = preprocess(&img, &PreprocessConfig::default()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn wide_image_plan_and_mask_alignment() {
        let plan = ResizePlan::new(100, 300, 512).unwrap();
        assert_eq!((plan.content_height, plan.content_width), (170, 512));
        assert_eq!((plan.pad_top, plan.pad_left), (171, 0));

        let mask = BinaryMask::from_fn(100, 300, |(r, c)| (20..70).contains(&r) && (50..220).contains(&c));
        let cfg = PreprocessConfig::default();
        let a = preprocess_mask(&mask, &cfg).unwrap();
        let b = preprocess_mask(&mask.clone(), &cfg).unwrap();
        assert_eq!(a.iou(&b), 1.0);
        assert!((0..171).all(|r| !a.get(r, 256)));
        let img = Image::from_gray(Array2::from_elem((100, 300), 1.0)).unwrap();
        let out = preprocess(&img, &cfg).unwrap();
        // every foreground pixel of the resized mask lands on resized content
        for ((r, c), &v) in a.grid().indexed_iter() {
            if v {
                assert!(out.channel(0)[[r, c]] > 0.0);
            }
        }
    }

    #[test]
    fn odd_residual_goes_bottom_right() {
        let plan = ResizePlan::new(3, 10, 10).unwrap();
        assert_eq!(plan.content_height, 3);
        assert_eq!(plan.pad_top, 3); // 3 above, 4 below
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(ResizePlan::new(0, 5, 512), Err(Error::InvalidImage(_))));
    }
}
