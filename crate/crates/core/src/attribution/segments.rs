use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Partition of an image into `n_segments` regions with ids `0..n_segments`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMap {
    pub grid: Array2<u32>,
    pub n_segments: usize,
}

impl SegmentMap {
    pub fn dims(&self) -> (usize, usize) {
        self.grid.dim()
    }

    /// Pixel count of each segment.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_segments];
        for &s in &self.grid {
            sizes[s as usize] += 1;
        }
        sizes
    }
}

/// Rows and columns of the regular grid chosen for `target` segments: the
/// product closest to `target`, then blocks closest to square, then fewer rows.
pub fn grid_shape(height: usize, width: usize, target: usize) -> Result<(usize, usize)> {
    if target < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 segments, got {target}")));
    }
    if target > height * width {
        return Err(Error::InvalidArgument(format!(
            "{target} segments exceed the {height}x{width} pixel count"
        )));
    }
    let mut best: Option<((usize, f64, usize), (usize, usize))> = None;
    for rows in 1..=height.min(target) {
        let base = target / rows;
        for cols in [base, base + 1] {
            if cols == 0 || cols > width || rows * cols < 2 {
                continue;
            }
            let deviation = (rows * cols).abs_diff(target);
            let block_h = height as f64 / rows as f64;
            let block_w = width as f64 / cols as f64;
            let aspect = (block_h / block_w).ln().abs();
            let key = (deviation, aspect, rows);
            let better = match &best {
                None => true,
                Some((k, _)) => {
                    key.0 < k.0 || (key.0 == k.0 && (key.1 < k.1 - 1e-12 || ((key.1 - k.1).abs() <= 1e-12 && key.2 < k.2)))
                }
            };
            if better {
                best = Some((key, (rows, cols)));
            }
        }
    }
    Ok(best.expect("at least one grid fits").1)
}

/// Regular grid superpixels; block boundaries at `floor(i * side / n)`.
pub fn segment_superpixels(height: usize, width: usize, target: usize) -> Result<SegmentMap> {
    let (rows, cols) = grid_shape(height, width, target)?;
    let grid = Array2::from_shape_fn((height, width), |(y, x)| {
        let r = (0..rows).rev().find(|&i| y >= i * height / rows).unwrap_or(0);
        let c = (0..cols).rev().find(|&j| x >= j * width / cols).unwrap_or(0);
        (r * cols + c) as u32
    });
    Ok(SegmentMap {
        grid,
        n_segments: rows * cols,
    })
}
