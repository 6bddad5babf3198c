use ndarray::Array3;
use rand::Rng;

use super::config::Augmentation;
use crate::mask_ops::Image;

/// Applies the augmentations in order; pixels rotated in from outside the
/// frame are black.
pub fn augment(image: &Image, augmentations: &[Augmentation], rng: &mut impl Rng) -> Image {
    let mut img = image.clone();
    for a in augmentations {
        img = match *a {
            Augmentation::Rotation { max_degrees } => {
                if max_degrees == 0.0 {
                    img
                } else {
                    let deg = rng.random_range(-max_degrees..=max_degrees);
                    rotate(&img, deg)
                }
            }
            Augmentation::HorizontalFlip { probability } => {
                if rng.random_bool(probability) {
                    flip_horizontal(&img)
                } else {
                    img
                }
            }
            Augmentation::Brightness { min, max } => {
                let f = if min == max { min } else { rng.random_range(min..=max) } as f32;
                let mut px = img.into_pixels();
                px.mapv_inplace(|v| (v * f).clamp(0.0, 1.0));
                Image::new(px).expect("same shape")
            }
        };
    }
    img
}

pub fn flip_horizontal(image: &Image) -> Image {
    let (c, h, w) = (image.channels(), image.height(), image.width());
    let px = image.pixels();
    Image::new(Array3::from_shape_fn((c, h, w), |(k, y, x)| px[[k, y, w - 1 - x]])).expect("same shape")
}

/// Bilinear rotation by `degrees` (counter-clockwise) about the image center.
pub fn rotate(image: &Image, degrees: f64) -> Image {
    let (c, h, w) = (image.channels(), image.height(), image.width());
    let px = image.pixels();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = Array3::<f32>::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            // inverse map output pixel to source coordinates
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            if sx < -1.0 || sy < -1.0 || sx > w as f64 || sy > h as f64 {
                continue;
            }
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = (sx - x0) as f32;
            let fy = (sy - y0) as f32;
            let sample = |k: usize, yy: f64, xx: f64| -> f32 {
                if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
                    0.0
                } else {
                    px[[k, yy as usize, xx as usize]]
                }
            };
            for k in 0..c {
                let v = sample(k, y0, x0) * (1.0 - fx) * (1.0 - fy)
                    + sample(k, y0, x0 + 1.0) * fx * (1.0 - fy)
                    + sample(k, y0 + 1.0, x0) * (1.0 - fx) * fy
                    + sample(k, y0 + 1.0, x0 + 1.0) * fx * fy;
                out[[k, y, x]] = v;
            }
        }
    }
    Image::new(out).expect("same shape")
}
