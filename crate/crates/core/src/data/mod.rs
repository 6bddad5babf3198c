//! Dataset manifests, metadata filtering, fold splitting, the synthetic
//! planted-shortcut generator and lazy materialization of masked variants.

mod chest;
mod manifest;
mod split;
mod store;
mod synthetic;

pub use chest::{
    filter_chest_manifest, parse_label_list, ChestMetadata, ChestRecord, ChexmaskEntry, ChexmaskIndex, CHEST_CLASSES,
    MASK_QUALITY_THRESHOLD,
};
pub use manifest::{DatasetManifest, Metadata, Projection, Sample, Sex, Task};
pub use split::{split, Fold, FoldAssignment, SplitConfig};
pub use store::{
    materialize, materialize_sample, materialize_with, DirectoryStore, EvalSet, MaskedSample, MemoryStore, SampleStore,
};
pub use synthetic::{
    corner_patch, generate_synthetic, render_scene, tag_extent, Grating, SyntheticConfig, SyntheticDataset, SyntheticScene, TagPolarity,
    CDR_THRESHOLD, SYNTHETIC_CLASS,
};
