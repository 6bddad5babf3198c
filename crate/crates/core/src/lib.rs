//! Mask-based audit of shortcut learning in image classifiers.
//!
//! Models are trained and cross-evaluated on five masked variants of a dataset
//! (full image, ROI removed, only ROI kept, each with a precise mask or its
//! bounding box). The crate provides the masking algebra, dataset handling and
//! a planted-shortcut generator, a small CNN trainer, AUC/DeLong statistics,
//! dilation sweeps, embedding comparison, kernel-SHAP attribution, the
//! reader-study selection logic and report export.

pub mod error;
pub mod attribution;
pub mod data;
pub mod embeddings;
pub mod evaluation;
pub mod mask_ops;
pub mod report;
pub mod study;
pub mod training;

pub use error::{Error, Result};
pub use mask_ops::{BinaryMask, BoundingBox, Image, MaskingStrategy};
