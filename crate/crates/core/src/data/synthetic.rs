//! Planted-shortcut benchmark generator.
//!
//! Each image holds a disc-shaped ROI with a brighter inner cup; the label is
//! whether the cup-to-disc ratio exceeds [`CDR_THRESHOLD`]. Two confounds can
//! be planted: a bright square tag in the top-left corner correlated with the
//! label (outside the ROI), and a label-dependent disc radius. The background
//! carries random low-frequency gratings that are independent of the label.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, Metadata, Sample, Task};
use crate::error::{Error, Result};
use crate::mask_ops::{BinaryMask, Image};

pub const CDR_THRESHOLD: f64 = 0.5;
pub const SYNTHETIC_CLASS: &str = "finding";

const BACKGROUND: f32 = 0.25;
const DISC: f32 = 0.55;
const CUP: f32 = 0.85;
const TAG: f32 = 1.0;
const NOISE_STD: f32 = 0.03;
/// Radius shift (pixels at 64x64) at full size confound; less than half the
/// radius range so size alone never separates the classes.
const MAX_SIZE_SHIFT: f64 = 0.75;
/// Disc radius range (pixels at 64x64); the disc covers a few percent of the
/// image, so most pixels are label-independent background.
const RADIUS_RANGE: (f64, f64) = (3.0, 5.0);

/// Where the tag goes relative to the label on correlated draws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagPolarity {
    /// Tag marks positives.
    #[default]
    Positive,
    /// Tag marks negatives; used for out-of-distribution splits where the
    /// shortcut no longer holds.
    Inverted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    /// 1 means the label is exactly the in-ROI finding; labels are flipped
    /// with probability `(1 - strength) / 2`.
    pub roi_feature_strength: f64,
    /// Probability that the tag follows the label; otherwise the tag is a fair coin.
    pub shortcut_strength: f64,
    /// Shift of the disc radius with the label, as a fraction of the maximum shift.
    pub size_confound: f64,
    /// Probability that the in-ROI finding is present.
    #[serde(default = "default_prevalence")]
    pub prevalence: f64,
    #[serde(default)]
    pub tag_polarity: TagPolarity,
    /// Amplitude of the label-independent background texture.
    #[serde(default = "default_texture")]
    pub texture_strength: f64,
    pub seed: u64,
    #[serde(default = "default_prefix")]
    pub id_prefix: String,
}

fn default_image_size() -> usize {
    64
}
fn default_prevalence() -> f64 {
    0.5
}
fn default_texture() -> f64 {
    0.4
}
fn default_prefix() -> String {
    "syn".into()
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            image_size: default_image_size(),
            roi_feature_strength: 1.0,
            shortcut_strength: 0.0,
            size_confound: 0.0,
            prevalence: default_prevalence(),
            tag_polarity: TagPolarity::Positive,
            texture_strength: default_texture(),
            seed: 0,
            id_prefix: default_prefix(),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        unit("roi_feature_strength", self.roi_feature_strength)?;
        unit("shortcut_strength", self.shortcut_strength)?;
        unit("size_confound", self.size_confound)?;
        unit("prevalence", self.prevalence)?;
        unit("texture_strength", self.texture_strength)?;
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be positive".into()));
        }
        if self.image_size < 32 {
            return Err(Error::InvalidArgument(format!(
                "image_size must be at least 32, got {}",
                self.image_size
            )));
        }
        Ok(())
    }
}

/// Sinusoidal background component; frequency in cycles per image side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grating {
    pub amplitude: f64,
    pub frequency: f64,
    pub angle: f64,
    pub phase: f64,
}

/// Everything needed to render one synthetic image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub center: (f64, f64),
    pub disc_radius: f64,
    pub cup_to_disc: f64,
    pub tag: bool,
    pub noise_seed: u64,
    #[serde(default)]
    pub texture: Vec<Grating>,
}

impl SyntheticScene {
    pub fn finding_present(&self) -> bool {
        self.cup_to_disc > CDR_THRESHOLD
    }
}

/// Side of the square corner patch that may contain the tag and never
/// intersects the ROI.
pub fn corner_patch(size: usize) -> usize {
    size / 4
}

/// Offset from the top-left corner and side length of the tag square.
pub fn tag_extent(size: usize) -> (usize, usize) {
    let offset = (3 * size) / 64;
    let side = ((6 * size) / 64).max(2);
    (offset, side)
}

fn texture_at(texture: &[Grating], r: f64, c: f64, size: f64) -> f32 {
    texture
        .iter()
        .map(|g| {
            let t = (c * g.angle.cos() + r * g.angle.sin()) / size;
            g.amplitude * (std::f64::consts::TAU * g.frequency * t + g.phase).sin()
        })
        .sum::<f64>() as f32
}

pub fn render_scene(scene: &SyntheticScene, size: usize) -> Result<(Image, BinaryMask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(scene.noise_seed);
    let noise = Normal::new(0.0f32, NOISE_STD).expect("valid std");
    let (cy, cx) = scene.center;
    let r2 = scene.disc_radius * scene.disc_radius;
    let cup_r = scene.disc_radius * scene.cup_to_disc;
    let cup2 = cup_r * cup_r;
    let (off, side) = tag_extent(size);

    let mut mask = Array2::from_elem((size, size), false);
    let plane = Array2::from_shape_fn((size, size), |(r, c)| {
        let dy = r as f64 - cy;
        let dx = c as f64 - cx;
        let d2 = dy * dy + dx * dx;
        let mut v = BACKGROUND + texture_at(&scene.texture, r as f64, c as f64, size as f64);
        if d2 <= r2 {
            mask[[r, c]] = true;
            v = if d2 <= cup2 { CUP } else { DISC };
        }
        if scene.tag && (off..off + side).contains(&r) && (off..off + side).contains(&c) {
            v = TAG;
        }
        let v = (v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        // quantize so PNG storage is lossless
        (v * 255.0).round() / 255.0
    });
    Ok((Image::from_gray(plane)?, BinaryMask::new(mask)))
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub config: SyntheticConfig,
    pub manifest: DatasetManifest,
    pub scenes: BTreeMap<String, SyntheticScene>,
    pub images: BTreeMap<String, Image>,
    pub masks: BTreeMap<String, BinaryMask>,
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let size = config.image_size;
    let scale = size as f64 / 64.0;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = format!("{}", config.n_samples.saturating_sub(1)).len().max(4);

    let mut samples = Vec::with_capacity(config.n_samples);
    let mut scenes = BTreeMap::new();
    let mut images = BTreeMap::new();
    let mut masks = BTreeMap::new();
    for i in 0..config.n_samples {
        let id = format!("{}{:0width$}", config.id_prefix, i);
        let finding = rng.random_bool(config.prevalence);
        let cup_to_disc = if finding {
            rng.random_range(0.55..0.80)
        } else {
            rng.random_range(0.20..0.45)
        };
        let flip = rng.random_bool((1.0 - config.roi_feature_strength) / 2.0);
        let label = finding != flip;

        let correlated = rng.random_bool(config.shortcut_strength);
        let coin = rng.random_bool(0.5);
        let tag = if correlated {
            match config.tag_polarity {
                TagPolarity::Positive => label,
                TagPolarity::Inverted => !label,
            }
        } else {
            coin
        };

        let base_radius = rng.random_range(RADIUS_RANGE.0..RADIUS_RANGE.1);
        let shift = MAX_SIZE_SHIFT * config.size_confound * if label { 1.0 } else { -1.0 };
        let disc_radius = (base_radius + shift) * scale;
        let jitter = 2.0 * scale;
        let center_base = size as f64 / 2.0 - 0.5;
        let center = (
            center_base + rng.random_range(-jitter..=jitter),
            center_base + rng.random_range(-jitter..=jitter),
        );
        let scene = SyntheticScene {
            center,
            disc_radius,
            cup_to_disc,
            tag,
            noise_seed: rng.random(),
            texture: (0..3)
                .map(|_| Grating {
                    amplitude: config.texture_strength * rng.random_range(0.25..0.5),
                    frequency: rng.random_range(1.5..5.0),
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                })
                .collect(),
        };
        let (image, mask) = render_scene(&scene, size)?;
        samples.push(Sample {
            image_id: id.clone(),
            image_path: PathBuf::from("images").join(format!("{id}.png")),
            labels: vec![label],
            metadata: Metadata::default(),
            mask_path: Some(PathBuf::from("masks").join(format!("{id}.png"))),
            mask_quality: Some(1.0),
        });
        scenes.insert(id.clone(), scene);
        images.insert(id.clone(), image);
        masks.insert(id, mask);
    }
    let manifest = DatasetManifest::new(
        format!("synthetic-{}", config.id_prefix),
        vec![SYNTHETIC_CLASS.to_string()],
        samples,
        Task::Binary,
    )?;
    Ok(SyntheticDataset {
        config: config.clone(),
        manifest,
        scenes,
        images,
        masks,
    })
}

impl SyntheticDataset {
    /// Writes `images/`, `masks/`, `manifest.csv` and `scenes.json` under `root`.
    pub fn write(&self, root: &Path) -> Result<()> {
        for (id, img) in &self.images {
            img.save_png(&root.join("images").join(format!("{id}.png")))?;
        }
        for (id, m) in &self.masks {
            m.save_png(&root.join("masks").join(format!("{id}.png")))?;
        }
        self.manifest.write_csv(&root.join("manifest.csv"))?;
        let scenes = serde_json::to_string_pretty(&self.scenes)?;
        crate::mask_ops::write_bytes(&root.join("scenes.json"), scenes.as_bytes())
    }

    pub fn store(&self) -> super::store::MemoryStore {
        super::store::MemoryStore::new(self.images.clone(), self.masks.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, rho: f64, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n_samples: n,
            shortcut_strength: rho,
            seed,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn full_shortcut_tag_equals_label() {
        let d = generate_synthetic(&cfg(300, 1.0, 1)).unwrap();
        for s in &d.manifest.samples {
            assert_eq!(d.scenes[&s.image_id].tag, s.labels[0]);
        }
    }

    #[test]
    fn inverted_tag_marks_negatives() {
        let mut c = cfg(200, 1.0, 1);
        c.tag_polarity = TagPolarity::Inverted;
        let d = generate_synthetic(&c).unwrap();
        for s in &d.manifest.samples {
            assert_eq!(d.scenes[&s.image_id].tag, !s.labels[0]);
        }
    }

    #[test]
    fn clean_data_label_is_the_in_roi_finding() {
        let d = generate_synthetic(&cfg(300, 0.0, 2)).unwrap();
        for s in &d.manifest.samples {
            assert_eq!(d.scenes[&s.image_id].finding_present(), s.labels[0]);
        }
    }

    #[test]
    fn roi_never_reaches_corner_patches() {
        let mut c = cfg(400, 0.5, 3);
        c.size_confound = 1.0;
        let d = generate_synthetic(&c).unwrap();
        let p = corner_patch(c.image_size);
        let n = c.image_size;
        for m in d.masks.values() {
            for r in 0..p {
                for col in 0..p {
                    for (rr, cc) in [(r, col), (r, n - 1 - col), (n - 1 - r, col), (n - 1 - r, n - 1 - col)] {
                        assert!(!m.get(rr, cc));
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_synthetic(&cfg(50, 0.5, 9)).unwrap();
        let b = generate_synthetic(&cfg(50, 0.5, 9)).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.masks, b.masks);
        assert_eq!(a.manifest, b.manifest);
        let png = |d: &SyntheticDataset| d.images.values().next().unwrap().to_png_bytes().unwrap();
        assert_eq!(png(&a), png(&b));
    }

    #[test]
    fn invalid_strength_rejected() {
        let mut c = cfg(10, 1.5, 0);
        assert!(generate_synthetic(&c).is_err());
        c.shortcut_strength = 0.5;
        c.size_confound = -0.1;
        assert!(generate_synthetic(&c).is_err());
    }
}
