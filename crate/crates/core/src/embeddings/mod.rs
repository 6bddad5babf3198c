//! Penultimate-layer embeddings: extraction, cosine comparison of masked
//! variants against full images, 2D projection and a disk cache.

mod tsne;

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use tsne::{silhouette_score, tsne, TsneConfig};

use crate::data::EvalSet;
use crate::error::{Error, Result};
use crate::mask_ops::MaskingStrategy;
use crate::training::TrainedModel;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub image_ids: Vec<String>,
    pub strategy: MaskingStrategy,
    /// One row per image.
    pub vectors: Array2<f32>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Embeddings of a masked evaluation set under `model`.
pub fn extract_embeddings(model: &TrainedModel, set: &EvalSet, strategy: MaskingStrategy) -> Result<EmbeddingSet> {
    let vectors = model.embed(&set.images)?;
    if vectors.iter().any(|v| !v.is_finite()) {
        return Err(Error::ModelOutput("non-finite embedding".into()));
    }
    Ok(EmbeddingSet {
        image_ids: set.ids.clone(),
        strategy,
        vectors,
    })
}

/// Cosine of two vectors; `None` when either has zero norm.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSummary {
    pub strategy: MaskingStrategy,
    /// `None` for all images, otherwise the class whose positives were kept.
    pub class_name: Option<String>,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    /// Pairs skipped because a vector had zero norm.
    pub excluded: usize,
}

/// Mean and population std of per-image cosine similarity between the
/// full-image and masked embeddings, optionally restricted to images where
/// `filter` is true.
pub fn cosine_similarity_report(
    full: &EmbeddingSet,
    masked: &EmbeddingSet,
    filter: Option<(&str, &[bool])>,
) -> Result<CosineSummary> {
    if full.image_ids != masked.image_ids {
        return Err(Error::InvalidArgument("embedding sets are not aligned by image id".into()));
    }
    if full.dim() != masked.dim() {
        return Err(Error::shape(format!("dimension {}", full.dim()), masked.dim()));
    }
    if let Some((_, keep)) = filter {
        if keep.len() != full.len() {
            return Err(Error::shape(format!("{} filter entries", full.len()), keep.len()));
        }
    }
    let mut sims = Vec::new();
    let mut excluded = 0;
    for i in 0..full.len() {
        if filter.is_some_and(|(_, keep)| !keep[i]) {
            continue;
        }
        let a = full.vectors.row(i);
        let b = masked.vectors.row(i);
        match cosine_similarity(a.as_slice().expect("row-major"), b.as_slice().expect("row-major")) {
            Some(s) => sims.push(s),
            None => excluded += 1,
        }
    }
    let n = sims.len();
    let (mean, std) = if n == 0 {
        (f64::NAN, f64::NAN)
    } else {
        let mean = sims.iter().sum::<f64>() / n as f64;
        let var = sims.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
        (mean, var.sqrt())
    };
    // the masked side names the row; symmetric calls report the non-FULL one
    let strategy = if masked.strategy == MaskingStrategy::Full {
        full.strategy
    } else {
        masked.strategy
    };
    Ok(CosineSummary {
        strategy,
        class_name: filter.map(|(name, _)| name.to_string()),
        mean,
        std,
        n,
        excluded,
    })
}

/// Summary rows for all images and for the positives of each class.
pub fn cosine_table(
    full: &EmbeddingSet,
    masked: &[EmbeddingSet],
    labels: &[Vec<bool>],
    class_names: &[String],
) -> Result<Vec<CosineSummary>> {
    let mut rows = Vec::new();
    for m in masked {
        rows.push(cosine_similarity_report(full, m, None)?);
        for (k, name) in class_names.iter().enumerate() {
            let keep: Vec<bool> = labels.iter().map(|l| l[k]).collect();
            rows.push(cosine_similarity_report(full, m, Some((name, &keep)))?);
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub image_id: String,
    pub strategy: MaskingStrategy,
    pub x: f64,
    pub y: f64,
}

/// t-SNE of the concatenated sets; each point keeps its image id and strategy.
pub fn project_2d(sets: &[EmbeddingSet], config: &TsneConfig) -> Result<Vec<ProjectedPoint>> {
    let dim = sets.first().map_or(0, EmbeddingSet::dim);
    if sets.iter().any(|s| s.dim() != dim) {
        return Err(Error::InvalidArgument("embedding sets have different dimensions".into()));
    }
    let n: usize = sets.iter().map(EmbeddingSet::len).sum();
    let mut x = Array2::<f64>::zeros((n, dim));
    let mut tags = Vec::with_capacity(n);
    let mut r = 0;
    for s in sets {
        for (i, id) in s.image_ids.iter().enumerate() {
            x.row_mut(r).assign(&s.vectors.row(i).mapv(f64::from));
            tags.push((id.clone(), s.strategy));
            r += 1;
        }
    }
    let y = tsne(&x, config)?;
    Ok(tags
        .into_iter()
        .enumerate()
        .map(|(i, (image_id, strategy))| ProjectedPoint {
            image_id,
            strategy,
            x: y[[i, 0]],
            y: y[[i, 1]],
        })
        .collect())
}

/// Silhouette of the projected points of two strategies, labeled by strategy.
pub fn strategy_silhouette(points: &[ProjectedPoint], a: MaskingStrategy, b: MaskingStrategy) -> Result<f64> {
    let chosen: Vec<&ProjectedPoint> = points.iter().filter(|p| p.strategy == a || p.strategy == b).collect();
    let coords = Array2::from_shape_fn((chosen.len(), 2), |(i, c)| if c == 0 { chosen[i].x } else { chosen[i].y });
    let labels: Vec<usize> = chosen.iter().map(|p| usize::from(p.strategy == b)).collect();
    silhouette_score(&coords, &labels)
}

pub fn projection_csv(points: &[ProjectedPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "strategy", "x", "y"])?;
    for p in points {
        w.write_record([p.image_id.as_str(), p.strategy.as_str(), &p.x.to_string(), &p.y.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CacheSidecar {
    model_hash: String,
    strategy: MaskingStrategy,
    image_ids: Vec<String>,
    rows: usize,
    dim: usize,
}

/// Embeddings stored as little-endian f32 matrices with a JSON sidecar,
/// keyed by model fingerprint and strategy.
#[derive(Clone, Debug)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

impl EmbeddingCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn stem(&self, model_hash: &str, strategy: MaskingStrategy) -> PathBuf {
        self.dir.join(format!("{}_{}", &model_hash[..model_hash.len().min(16)], strategy.as_str()))
    }

    pub fn store(&self, model_hash: &str, set: &EmbeddingSet) -> Result<()> {
        let stem = self.stem(model_hash, set.strategy);
        let mut bytes = Vec::with_capacity(set.vectors.len() * 4);
        for v in set.vectors.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        crate::mask_ops::write_bytes(&stem.with_extension("f32"), &bytes)?;
        let side = CacheSidecar {
            model_hash: model_hash.to_string(),
            strategy: set.strategy,
            image_ids: set.image_ids.clone(),
            rows: set.len(),
            dim: set.dim(),
        };
        crate::mask_ops::write_bytes(&stem.with_extension("json"), serde_json::to_string_pretty(&side)?.as_bytes())
    }

    /// Cached set, or `None` when absent or written for another model.
    pub fn load(&self, model_hash: &str, strategy: MaskingStrategy) -> Result<Option<EmbeddingSet>> {
        let stem = self.stem(model_hash, strategy);
        let side_path = stem.with_extension("json");
        if !side_path.exists() {
            return Ok(None);
        }
        let side: CacheSidecar = serde_json::from_str(&read_string(&side_path)?)?;
        if side.model_hash != model_hash || side.strategy != strategy {
            return Ok(None);
        }
        let bin_path = stem.with_extension("f32");
        let bytes = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        if bytes.len() != side.rows * side.dim * 4 {
            return Err(Error::shape(format!("{} bytes", side.rows * side.dim * 4), bytes.len()));
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Some(EmbeddingSet {
            image_ids: side.image_ids,
            strategy,
            vectors: Array2::from_shape_vec((side.rows, side.dim), values).expect("checked length"),
        }))
    }
}

fn read_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
