//! Binary-mask algebra: bounding boxes, disc dilation, the five masking
//! transforms and aspect-preserving preprocessing.

mod mask;
mod masking;
mod preprocess;
mod raster;

pub use mask::{bounding_box, dilate, squared_distance_to_foreground, BinaryMask, BoundingBox};
pub use masking::{apply_masking, apply_masking_with, strategy_region, MaskingStrategy, MASKED_VALUE};
pub use preprocess::{preprocess, preprocess_mask, PreprocessConfig, ResizePlan, DEFAULT_TARGET_SIZE};
pub use raster::Image;

pub(crate) use raster::{encode_png, write_bytes};
