use std::path::Path;

use image::{GrayImage, Luma};
use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::raster::{encode_png, write_bytes};
use crate::error::{Error, Result};

/// Binary region-of-interest mask. `true` marks foreground (the ROI).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    grid: Array2<bool>,
}

impl BinaryMask {
    pub fn new(grid: Array2<bool>) -> Self {
        Self { grid }
    }

    pub fn from_fn(height: usize, width: usize, f: impl FnMut((usize, usize)) -> bool) -> Self {
        Self::new(Array2::from_shape_fn((height, width), f))
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self::new(Array2::from_elem((height, width), false))
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::new(Array2::from_elem((height, width), true))
    }

    pub fn grid(&self) -> &Array2<bool> {
        &self.grid
    }

    pub fn height(&self) -> usize {
        self.grid.nrows()
    }

    pub fn width(&self) -> usize {
        self.grid.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dim()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.grid[[row, col]]
    }

    pub fn count(&self) -> usize {
        self.grid.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.grid.iter().any(|&v| v)
    }

    pub fn is_full(&self) -> bool {
        self.grid.iter().all(|&v| v)
    }

    /// True when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims()
            && Zip::from(&self.grid)
                .and(&other.grid)
                .all(|&a, &b| !a || b)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                format!("{:?}", self.dims()),
                format!("{:?}", other.dims()),
            ));
        }
        Ok(Self::new(Zip::from(&self.grid).and(&other.grid).map_collect(|&a, &b| a || b)))
    }

    pub fn invert(&self) -> BinaryMask {
        Self::new(self.grid.mapv(|v| !v))
    }

    /// Intersection over union; two empty masks have IoU 1.
    pub fn iou(&self, other: &BinaryMask) -> f64 {
        let mut inter = 0usize;
        let mut uni = 0usize;
        Zip::from(&self.grid).and(&other.grid).for_each(|&a, &b| {
            inter += (a && b) as usize;
            uni += (a || b) as usize;
        });
        if uni == 0 {
            1.0
        } else {
            inter as f64 / uni as f64
        }
    }

    /// Any nonzero pixel is foreground.
    pub fn from_gray(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        Self::from_fn(h as usize, w as usize, |(r, c)| img.get_pixel(c as u32, r as u32)[0] > 0)
    }

    /// 0 = background, 255 = foreground.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width() as u32, self.height() as u32, |x, y| {
            Luma([if self.grid[[y as usize, x as usize]] { 255 } else { 0 }])
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_gray(&image::open(path)?.to_luma8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = encode_png(&image::DynamicImage::ImageLuma8(self.to_gray()))?;
        write_bytes(path, &bytes)
    }

    /// Decodes a run-length encoded mask as stored in CheXmask CSV files:
    /// whitespace-separated `start length` pairs, 1-based starts, row-major order.
    pub fn from_rle(rle: &str, height: usize, width: usize) -> Result<Self> {
        let numbers = rle
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::Schema(format!("invalid RLE token `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if numbers.len() % 2 != 0 {
            return Err(Error::Schema("RLE has an odd number of values".into()));
        }
        let total = height * width;
        let mut flat = vec![false; total];
        for pair in numbers.chunks_exact(2) {
            let (start, len) = (pair[0], pair[1]);
            if start == 0 || start - 1 + len > total {
                return Err(Error::Schema(format!(
                    "RLE run {start}+{len} outside a {height}x{width} mask"
                )));
            }
            flat[start - 1..start - 1 + len].fill(true);
        }
        let grid = Array2::from_shape_vec((height, width), flat)
            .expect("flat length equals height * width");
        Ok(Self::new(grid))
    }

    pub fn to_rle(&self) -> String {
        let mut runs = Vec::new();
        let mut start = None;
        let flat: Vec<bool> = self.grid.iter().copied().collect();
        for (i, &v) in flat.iter().enumerate() {
            match (v, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push(format!("{} {}", s + 1, i - s));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push(format!("{} {}", s + 1, flat.len() - s));
        }
        runs.join(" ")
    }
}

/// Inclusive pixel box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub row_min: usize,
    pub col_min: usize,
    pub row_max: usize,
    pub col_max: usize,
}

impl BoundingBox {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_min..=self.row_max).contains(&row) && (self.col_min..=self.col_max).contains(&col)
    }

    /// The filled box as a mask on a `height` x `width` grid.
    pub fn to_mask(&self, height: usize, width: usize) -> BinaryMask {
        BinaryMask::from_fn(height, width, |(r, c)| self.contains(r, c))
    }
}

/// Smallest axis-aligned box covering every foreground pixel, across all
/// connected components.
pub fn bounding_box(mask: &BinaryMask) -> Result<BoundingBox> {
    let mut bb: Option<BoundingBox> = None;
    for ((r, c), &v) in mask.grid.indexed_iter() {
        if !v {
            continue;
        }
        bb = Some(match bb {
            None => BoundingBox {
                row_min: r,
                col_min: c,
                row_max: r,
                col_max: c,
            },
            Some(b) => BoundingBox {
                row_min: b.row_min.min(r),
                col_min: b.col_min.min(c),
                row_max: b.row_max.max(r),
                col_max: b.col_max.max(c),
            },
        });
    }
    bb.ok_or(Error::EmptyMask)
}

/// Binary dilation by a Euclidean disc of radius `factor` pixels: a pixel is
/// set when some foreground pixel lies within distance `factor`.
pub fn dilate(mask: &BinaryMask, factor: i64) -> Result<BinaryMask> {
    if factor < 0 {
        return Err(Error::InvalidArgument(format!(
            "dilation factor must be non-negative, got {factor}"
        )));
    }
    if factor == 0 || mask.is_empty() {
        return Ok(mask.clone());
    }
    let r2 = (factor as f64) * (factor as f64);
    let dist = squared_distance_to_foreground(mask);
    Ok(BinaryMask::new(dist.mapv(|d| d <= r2)))
}

/// Exact squared Euclidean distance from every pixel to the nearest foreground
/// pixel (Felzenszwalb–Huttenlocher separable lower-envelope transform).
pub fn squared_distance_to_foreground(mask: &BinaryMask) -> Array2<f64> {
    const INF: f64 = 1e20;
    let (h, w) = mask.dims();
    let mut d = mask.grid.mapv(|v| if v { 0.0 } else { INF });

    let mut buf = vec![0.0; h.max(w)];
    let mut out = vec![0.0; h.max(w)];
    for c in 0..w {
        for r in 0..h {
            buf[r] = d[[r, c]];
        }
        edt_1d(&buf[..h], &mut out[..h]);
        for r in 0..h {
            d[[r, c]] = out[r];
        }
    }
    for r in 0..h {
        for c in 0..w {
            buf[c] = d[[r, c]];
        }
        edt_1d(&buf[..w], &mut out[..w]);
        for c in 0..w {
            d[[r, c]] = out[c];
        }
    }
    d
}

fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let sq = |q: usize| (q * q) as f64;
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + sq(q)) - (f[p] + sq(p))) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *o = dq * dq + f[v[k]];
    }
}
