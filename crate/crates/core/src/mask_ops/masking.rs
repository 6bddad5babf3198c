use std::fmt;
use std::str::FromStr;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::mask::{bounding_box, BinaryMask};
use super::raster::Image;
use crate::error::{Error, Result};

/// Value written into removed pixels (black).
pub const MASKED_VALUE: f32 = 0.0;

/// The five dataset variants: the full image, the image with the ROI removed
/// (precise mask or its bounding box), and only the ROI kept (precise mask or
/// its bounding box).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MaskingStrategy {
    Full,
    NoRoi,
    NoRoiBb,
    OnlyRoi,
    OnlyRoiBb,
}

impl MaskingStrategy {
    pub const ALL: [MaskingStrategy; 5] = [
        MaskingStrategy::Full,
        MaskingStrategy::NoRoi,
        MaskingStrategy::NoRoiBb,
        MaskingStrategy::OnlyRoi,
        MaskingStrategy::OnlyRoiBb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MaskingStrategy::Full => "FULL",
            MaskingStrategy::NoRoi => "NO_ROI",
            MaskingStrategy::NoRoiBb => "NO_ROI_BB",
            MaskingStrategy::OnlyRoi => "ONLY_ROI",
            MaskingStrategy::OnlyRoiBb => "ONLY_ROI_BB",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).expect("listed in ALL")
    }

    pub fn uses_bounding_box(self) -> bool {
        matches!(self, MaskingStrategy::NoRoiBb | MaskingStrategy::OnlyRoiBb)
    }

    pub fn needs_mask(self) -> bool {
        self != MaskingStrategy::Full
    }

    /// Keeps the ROI (`ONLY_*`) rather than removing it (`NO_*`).
    pub fn keeps_roi(self) -> bool {
        matches!(self, MaskingStrategy::OnlyRoi | MaskingStrategy::OnlyRoiBb)
    }
}

impl fmt::Display for MaskingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown masking strategy `{s}`")))
    }
}

/// The region that a strategy removes or keeps: the mask itself, or its
/// filled bounding box for the `*_BB` variants.
pub fn strategy_region(mask: &BinaryMask, strategy: MaskingStrategy) -> Result<BinaryMask> {
    if strategy.uses_bounding_box() {
        let (h, w) = mask.dims();
        Ok(bounding_box(mask)?.to_mask(h, w))
    } else {
        Ok(mask.clone())
    }
}

pub fn apply_masking(image: &Image, mask: Option<&BinaryMask>, strategy: MaskingStrategy) -> Result<Image> {
    apply_masking_with(image, mask, strategy, MASKED_VALUE)
}

/// Like [`apply_masking`] with an explicit fill value for removed pixels.
pub fn apply_masking_with(
    image: &Image,
    mask: Option<&BinaryMask>,
    strategy: MaskingStrategy,
    fill: f32,
) -> Result<Image> {
    if strategy == MaskingStrategy::Full {
        return Ok(image.clone());
    }
    let mask = mask.ok_or_else(|| {
        Error::InvalidArgument(format!("strategy {strategy} requires a mask"))
    })?;
    if mask.dims() != image.dims() {
        return Err(Error::shape(
            format!("mask {:?}", image.dims()),
            format!("mask {:?}", mask.dims()),
        ));
    }
    // An empty mask has no bounding box; nothing to remove (NO_*) or keep (ONLY_*).
    let region = if mask.is_empty() {
        mask.clone()
    } else {
        strategy_region(mask, strategy)?
    };
    let keep_roi = strategy.keeps_roi();
    let mut out = image.clone();
    for mut plane in out.pixels_mut().axis_iter_mut(Axis(0)) {
        ndarray::Zip::from(&mut plane)
            .and(region.grid())
            .for_each(|v, &in_roi| {
                if in_roi != keep_roi {
                    *v = fill;
                }
            });
    }
    Ok(out)
}
