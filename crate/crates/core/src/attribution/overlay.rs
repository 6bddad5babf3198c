use ndarray::Array3;

use super::segments::SegmentMap;
use super::shap::AttributionMap;
use crate::error::{Error, Result};
use crate::mask_ops::Image;

const MAX_ALPHA: f32 = 0.6;

/// RGB overlay of segment values on a dimmed grayscale copy of `image`.
/// Positive values are red, negative blue; opacity scales with |value| on a
/// scale symmetric about zero, so equal magnitudes get equal weight.
pub fn render_overlay(image: &Image, segments: &SegmentMap, attribution: &AttributionMap) -> Result<Image> {
    if segments.dims() != image.dims() {
        return Err(Error::shape(format!("{:?}", image.dims()), format!("{:?}", segments.dims())));
    }
    if attribution.values.len() != segments.n_segments {
        return Err(Error::shape(
            format!("{} segment values", segments.n_segments),
            attribution.values.len(),
        ));
    }
    let scale = attribution.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gray = image.luminance();
    let (h, w) = image.dims();
    let mut out = Array3::<f32>::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let base = 0.2 + 0.6 * gray[[y, x]].clamp(0.0, 1.0);
            let v = attribution.values[segments.grid[[y, x]] as usize];
            let (alpha, tint) = if scale > 0.0 {
                let a = (v.abs() / scale) as f32 * MAX_ALPHA;
                (a, if v >= 0.0 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] })
            } else {
                (0.0, [0.0; 3])
            };
            for c in 0..3 {
                out[[c, y, x]] = (1.0 - alpha) * base + alpha * tint[c];
            }
        }
    }
    Image::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::segment_superpixels;
    use ndarray::Array2;

    fn map(values: Vec<f64>) -> AttributionMap {
        AttributionMap {
            values,
            base_value: 0.0,
            full_value: 0.0,
            class_index: 0,
            n_evaluations: 0,
            exact: true,
        }
    }

    #[test]
    fn sign_sets_hue() {
        let img = Image::from_gray(Array2::from_elem((4, 4), 0.5)).unwrap();
        let seg = segment_superpixels(4, 4, 2).unwrap();
        let out = render_overlay(&img, &seg, &map(vec![1.0, -1.0])).unwrap();
        let p = out.pixels();
        assert!(p[[0, 0, 0]] > p[[2, 0, 0]]);
        assert!(p[[2, 0, 3]] > p[[0, 0, 3]]);
        // symmetric scale: equal magnitudes, equal opacity
        assert!((p[[0, 0, 0]] - p[[2, 0, 3]]).abs() < 1e-6);
    }

    #[test]
    fn deterministic_png() {
        let img = Image::from_gray(Array2::from_shape_fn((8, 8), |(r, c)| (r + c) as f32 / 16.0)).unwrap();
        let seg = segment_superpixels(8, 8, 4).unwrap();
        let a = map(vec![0.3, -0.1, 0.0, 0.05]);
        let x = render_overlay(&img, &seg, &a).unwrap().to_png_bytes().unwrap();
        let y = render_overlay(&img, &seg, &a).unwrap().to_png_bytes().unwrap();
        assert_eq!(x, y);
    }
}
