//! Kernel SHAP over superpixels with occlusion to a fixed value.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::segments::SegmentMap;
use crate::error::{Error, Result};
use crate::mask_ops::{Image, MASKED_VALUE};
use crate::training::TrainedModel;

const BATCH: usize = 64;

/// Scalar model output for a batch of images.
pub trait Scorer {
    fn score(&self, images: &[Image]) -> Result<Vec<f64>>;
}

impl<F: Fn(&[Image]) -> Result<Vec<f64>>> Scorer for F {
    fn score(&self, images: &[Image]) -> Result<Vec<f64>> {
        self(images)
    }
}

/// Probability of one class under a trained model.
pub struct ModelScorer<'a> {
    pub model: &'a TrainedModel,
    pub class_index: usize,
}

impl Scorer for ModelScorer<'_> {
    fn score(&self, images: &[Image]) -> Result<Vec<f64>> {
        self.model.predict_class(images, self.class_index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    /// Shapley value per segment.
    pub values: Vec<f64>,
    /// Output with every segment occluded.
    pub base_value: f64,
    /// Output on the intact image.
    pub full_value: f64,
    pub class_index: usize,
    /// Model evaluations spent, including the empty and full coalitions.
    pub n_evaluations: usize,
    /// All coalitions were enumerated.
    pub exact: bool,
}

impl AttributionMap {
    /// Segment indices by decreasing value.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        idx
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapConfig {
    pub n_evaluations: usize,
    pub class_index: usize,
    pub occlusion_value: f32,
    pub seed: u64,
}

impl Default for ShapConfig {
    fn default() -> Self {
        Self {
            n_evaluations: 1000,
            class_index: 0,
            occlusion_value: MASKED_VALUE,
            seed: 0,
        }
    }
}

/// Image with the segments where `on[s]` is false replaced by `fill`.
pub fn occlude(image: &Image, segments: &SegmentMap, on: &[bool], fill: f32) -> Image {
    let mut out = image.clone();
    let grid = &segments.grid;
    for mut plane in out.pixels_mut().outer_iter_mut() {
        for ((y, x), v) in plane.indexed_iter_mut() {
            if !on[grid[[y, x]] as usize] {
                *v = fill;
            }
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight of a coalition of size `k` among `s` players.
fn kernel_weight(s: usize, k: usize) -> f64 {
    (s - 1) as f64 / (binomial(s, k) * k as f64 * (s - k) as f64)
}

fn evaluate(
    scorer: &dyn Scorer,
    image: &Image,
    segments: &SegmentMap,
    coalitions: &[Vec<bool>],
    fill: f32,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(coalitions.len());
    for chunk in coalitions.chunks(BATCH) {
        let imgs: Vec<Image> = chunk.iter().map(|c| occlude(image, segments, c, fill)).collect();
        let scores = scorer.score(&imgs)?;
        if scores.len() != imgs.len() {
            return Err(Error::shape(format!("{} scores", imgs.len()), scores.len()));
        }
        if let Some(bad) = scores.iter().find(|v| !v.is_finite()) {
            return Err(Error::ModelOutput(format!("score {bad}")));
        }
        out.extend(scores);
    }
    Ok(out)
}

/// Kernel SHAP: weighted least squares of coalition outputs on coalition
/// indicators, constrained so values sum to `full - base`. Every coalition
/// is enumerated when `2^S` fits the evaluation budget; otherwise paired
/// coalitions are drawn with kernel-proportional subset sizes.
pub fn kernel_shap(
    scorer: &dyn Scorer,
    image: &Image,
    segments: &SegmentMap,
    config: &ShapConfig,
) -> Result<AttributionMap> {
    let s = segments.n_segments;
    if segments.dims() != (image.height(), image.width()) {
        return Err(Error::shape(
            format!("{:?} segment grid", (image.height(), image.width())),
            format!("{:?}", segments.dims()),
        ));
    }
    if s < 2 {
        return Err(Error::InvalidArgument("need at least 2 segments".into()));
    }
    if config.n_evaluations < s + 2 {
        return Err(Error::InvalidArgument(format!(
            "n_evaluations {} below the minimum {}",
            config.n_evaluations,
            s + 2
        )));
    }
    let ends = evaluate(scorer, image, segments, &[vec![false; s], vec![true; s]], config.occlusion_value)?;
    let (base, full) = (ends[0], ends[1]);

    let exact = s < usize::BITS as usize - 1 && (1usize << s) <= config.n_evaluations;
    // coalition -> regression weight
    let mut weights: BTreeMap<Vec<bool>, f64> = BTreeMap::new();
    if exact {
        for bits in 1..(1usize << s) - 1 {
            let z: Vec<bool> = (0..s).map(|i| bits >> i & 1 == 1).collect();
            let k = z.iter().filter(|&&b| b).count();
            weights.insert(z, kernel_weight(s, k));
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let size_weights: Vec<f64> = (1..s).map(|k| ((s - 1) as f64) / (k * (s - k)) as f64).collect();
        let total: f64 = size_weights.iter().sum();
        let budget = config.n_evaluations - 2;
        let mut draws = 0usize;
        while weights.len() + 1 < budget && draws < 100 * budget {
            draws += 1;
            let mut u = rng.random::<f64>() * total;
            let mut k = s - 1;
            for (i, w) in size_weights.iter().enumerate() {
                if u < *w {
                    k = i + 1;
                    break;
                }
                u -= w;
            }
            let mut z = vec![false; s];
            for i in sample(&mut rng, s, k) {
                z[i] = true;
            }
            let complement: Vec<bool> = z.iter().map(|b| !b).collect();
            *weights.entry(z).or_insert(0.0) += 1.0;
            *weights.entry(complement).or_insert(0.0) += 1.0;
        }
    }
    let coalitions: Vec<Vec<bool>> = weights.keys().cloned().collect();
    let outputs = evaluate(scorer, image, segments, &coalitions, config.occlusion_value)?;

    // eliminate the last value through the sum constraint
    let n = coalitions.len();
    let d = s - 1;
    let delta = full - base;
    let mut xtwx = DMatrix::<f64>::zeros(d, d);
    let mut xtwy = DVector::<f64>::zeros(d);
    for (z, y) in coalitions.iter().zip(&outputs) {
        let w = weights[z];
        let last = z[d] as u8 as f64;
        let x: Vec<f64> = (0..d).map(|i| z[i] as u8 as f64 - last).collect();
        let target = y - base - last * delta;
        for i in 0..d {
            xtwy[i] += w * x[i] * target;
            for j in 0..d {
                xtwx[(i, j)] += w * x[i] * x[j];
            }
        }
    }
    let pinv = xtwx
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::InvalidArgument(format!("regression failed: {e}")))?;
    let phi = pinv * xtwy;
    let mut values: Vec<f64> = phi.iter().copied().collect();
    values.push(delta - values.iter().sum::<f64>());

    Ok(AttributionMap {
        values,
        base_value: base,
        full_value: full,
        class_index: config.class_index,
        n_evaluations: n + 2,
        exact,
    })
}
