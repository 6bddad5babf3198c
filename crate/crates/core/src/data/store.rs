use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::manifest::{DatasetManifest, Sample};
use crate::error::{Error, Result};
use crate::mask_ops::{apply_masking, dilate, preprocess, preprocess_mask, BinaryMask, Image, MaskingStrategy, PreprocessConfig};

/// Source of raw images and masks for manifest samples.
pub trait SampleStore: Sync {
    fn image(&self, sample: &Sample) -> Result<Image>;
    fn mask(&self, sample: &Sample) -> Result<Option<BinaryMask>>;
}

/// Reads `<root>/<image_path>` and `<root>/<mask_path>`.
#[derive(Clone, Debug)]
pub struct DirectoryStore {
    root: PathBuf,
}

impl DirectoryStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl SampleStore for DirectoryStore {
    fn image(&self, sample: &Sample) -> Result<Image> {
        Image::load(&self.root.join(&sample.image_path))
    }

    fn mask(&self, sample: &Sample) -> Result<Option<BinaryMask>> {
        match &sample.mask_path {
            None => Ok(None),
            Some(p) => {
                let path = self.root.join(p);
                if path.exists() {
                    BinaryMask::load(&path).map(Some)
                } else {
                    Ok(None)
                }
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct MemoryStore {
    images: BTreeMap<String, Image>,
    masks: BTreeMap<String, BinaryMask>,
}

impl MemoryStore {
    pub fn new(images: BTreeMap<String, Image>, masks: BTreeMap<String, BinaryMask>) -> Self {
        Self { images, masks }
    }
}

impl SampleStore for MemoryStore {
    fn image(&self, sample: &Sample) -> Result<Image> {
        self.images
            .get(&sample.image_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("image `{}`", sample.image_id)))
    }

    fn mask(&self, sample: &Sample) -> Result<Option<BinaryMask>> {
        Ok(self.masks.get(&sample.image_id).cloned())
    }
}

/// One masked, preprocessed sample.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSample {
    pub image_id: String,
    pub image: Image,
    pub labels: Vec<bool>,
}

/// Preprocess, dilate the mask, then apply the strategy. The bounding box of
/// `*_BB` strategies is taken after dilation.
pub fn materialize_sample(
    store: &(impl SampleStore + ?Sized),
    sample: &Sample,
    strategy: MaskingStrategy,
    dilation_factor: i64,
    preprocess_config: &PreprocessConfig,
) -> Result<Image> {
    let image = preprocess(&store.image(sample)?, preprocess_config)?;
    if !strategy.needs_mask() {
        return Ok(image);
    }
    let raw_mask = store
        .mask(sample)?
        .ok_or_else(|| Error::MissingMask(sample.image_id.clone()))?;
    let mask = dilate(&preprocess_mask(&raw_mask, preprocess_config)?, dilation_factor)?;
    apply_masking(&image, Some(&mask), strategy)
}

/// Lazily yields masked samples in image-id order. `dilation` gives the
/// dilation factor per sample, which lets sweeps dilate only one subgroup.
pub fn materialize_with<'a, S, F>(
    store: &'a S,
    samples: Vec<&'a Sample>,
    strategy: MaskingStrategy,
    preprocess_config: PreprocessConfig,
    dilation: F,
) -> impl Iterator<Item = Result<MaskedSample>> + 'a
where
    S: SampleStore + ?Sized,
    F: Fn(&Sample) -> i64 + 'a,
{
    let mut samples = samples;
    samples.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    samples.into_iter().map(move |s| {
        let image = materialize_sample(store, s, strategy, dilation(s), &preprocess_config)?;
        Ok(MaskedSample {
            image_id: s.image_id.clone(),
            image,
            labels: s.labels.clone(),
        })
    })
}

/// Every manifest sample under one strategy and a uniform dilation factor.
pub fn materialize<'a, S: SampleStore + ?Sized>(
    store: &'a S,
    manifest: &'a DatasetManifest,
    strategy: MaskingStrategy,
    dilation_factor: i64,
    preprocess_config: PreprocessConfig,
) -> impl Iterator<Item = Result<MaskedSample>> + 'a {
    materialize_with(
        store,
        manifest.samples.iter().collect(),
        strategy,
        preprocess_config,
        move |_| dilation_factor,
    )
}

/// Materialized images and labels held in memory, in image-id order.
#[derive(Clone, Debug, Default)]
pub struct EvalSet {
    pub ids: Vec<String>,
    pub images: Vec<Image>,
    pub labels: Vec<Vec<bool>>,
}

impl EvalSet {
    pub fn collect(iter: impl Iterator<Item = Result<MaskedSample>>) -> Result<Self> {
        let mut set = EvalSet::default();
        for s in iter {
            let s = s?;
            set.ids.push(s.image_id);
            set.images.push(s.image);
            set.labels.push(s.labels);
        }
        Ok(set)
    }

    /// Materializes the listed manifest samples (undilated) under `strategy`.
    pub fn load<S: SampleStore + ?Sized>(
        store: &S,
        manifest: &DatasetManifest,
        ids: &[String],
        strategy: MaskingStrategy,
        preprocess_config: PreprocessConfig,
    ) -> Result<Self> {
        Self::collect(materialize_with(store, manifest.subset(ids), strategy, preprocess_config, |_| 0))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Label column for one class.
    pub fn class_labels(&self, class_index: usize) -> Vec<bool> {
        self.labels.iter().map(|l| l[class_index]).collect()
    }
}
