//! Superpixel attributions: grid segmentation, kernel SHAP, overlays.

mod overlay;
mod segments;
mod shap;

use std::path::Path;

pub use overlay::render_overlay;
pub use segments::{grid_shape, segment_superpixels, SegmentMap};
pub use shap::{kernel_shap, occlude, AttributionMap, ModelScorer, Scorer, ShapConfig};

use crate::error::{Error, Result};
use crate::mask_ops::write_bytes;

impl AttributionMap {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &serde_json::to_vec_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}
