use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::augment;
use super::config::{Backbone, LossKind, TrainConfig};
use super::network::{bce_with_logits, sigmoid, Network, NetworkSpec, Normalization};
use crate::data::{DatasetManifest, EvalSet, FoldAssignment, SampleStore};
use crate::error::{Error, Result};
use crate::evaluation::auc_value;
use crate::mask_ops::{Image, MaskingStrategy, PreprocessConfig};

const INFERENCE_CHUNK: usize = 64;

/// Validation-loss early stopping: an epoch improves only when its loss is
/// below the best so far by more than `delta`.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    delta: f64,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, delta: f64) -> Self {
        Self {
            patience,
            delta,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, loss: f64) -> StopDecision {
        let improved = loss < self.best - self.delta;
        if improved {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean over classes of the validation AUC.
    pub val_auc: f64,
}

/// Training and validation images of one fold under one masking strategy.
#[derive(Clone, Copy, Debug)]
pub struct FoldData<'a> {
    pub train: &'a EvalSet,
    pub val: &'a EvalSet,
    pub class_names: &'a [String],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub strategy: MaskingStrategy,
    pub fold_index: usize,
    pub class_names: Vec<String>,
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose weights were restored.
    pub best_epoch: usize,
    pub embedding_dim: usize,
    pub network: Network,
}

/// Per-class `(negative, positive)` loss weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights(pub Vec<(f32, f32)>);

impl ClassWeights {
    pub fn uniform(n_classes: usize) -> Self {
        Self(vec![(1.0, 1.0); n_classes])
    }

    /// Inverse class frequency, normalized so the two weights of a class
    /// average to one. Classes without both labels fall back to uniform.
    pub fn inverse_frequency(labels: &[Vec<bool>], n_classes: usize) -> Self {
        let n = labels.len() as f64;
        Self(
            (0..n_classes)
                .map(|k| {
                    let pos = labels.iter().filter(|l| l[k]).count() as f64;
                    let neg = n - pos;
                    if pos == 0.0 || neg == 0.0 {
                        return (1.0, 1.0);
                    }
                    let (wp, wn) = (n / pos, n / neg);
                    let mean = (wp + wn) / 2.0;
                    ((wn / mean) as f32, (wp / mean) as f32)
                })
                .collect(),
        )
    }

    fn get(&self, class: usize, label: bool) -> f32 {
        let (n, p) = self.0[class];
        if label {
            p
        } else {
            n
        }
    }
}

/// Mean weighted binary cross-entropy over all entries, and its gradient with
/// respect to the logits.
pub fn weighted_bce(logits: &Array2<f32>, labels: &[&[bool]], weights: &ClassWeights) -> (f64, Array2<f32>) {
    let (b, k) = logits.dim();
    let scale = 1.0 / (b * k) as f32;
    let mut loss = 0.0f64;
    let mut grad = Array2::<f32>::zeros((b, k));
    for i in 0..b {
        for c in 0..k {
            let z = logits[[i, c]];
            let y = labels[i][c];
            let w = weights.get(c, y);
            loss += (w * bce_with_logits(z, y)) as f64;
            grad[[i, c]] = w * (sigmoid(z) - if y { 1.0 } else { 0.0 }) * scale;
        }
    }
    (loss / (b * k) as f64, grad)
}

struct Adam {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: i32,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self {
            lr: lr as f32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, params: &mut [f32], grad: &[f32], from: usize) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in from..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

fn check_set(set: &EvalSet, n_classes: usize) -> Result<(usize, usize)> {
    let first = set
        .images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty image set".into()))?;
    let dims = (first.channels(), first.height(), first.width());
    if dims.1 != dims.2 {
        return Err(Error::shape("square images", format!("{}x{}", dims.1, dims.2)));
    }
    for (img, labels) in set.images.iter().zip(&set.labels) {
        let d = (img.channels(), img.height(), img.width());
        if d != dims {
            return Err(Error::shape(format!("{dims:?}"), format!("{d:?}")));
        }
        if labels.len() != n_classes {
            return Err(Error::shape(format!("{n_classes} labels"), format!("{} labels", labels.len())));
        }
    }
    Ok((dims.0, dims.1))
}

/// Trains a freshly initialized network.
pub fn train(config: &TrainConfig, data: FoldData<'_>, strategy: MaskingStrategy, fold_index: usize) -> Result<TrainedModel> {
    config.validate()?;
    let (channels, stem_pool) = match &config.backbone {
        Backbone::DenseNet121 => {
            return Err(Error::UnsupportedBackbone(
                "densenet121 needs pretrained weights that are not bundled; use small_cnn".into(),
            ))
        }
        Backbone::SmallCnn { channels, stem_pool } => (channels.clone(), *stem_pool),
    };
    let (in_channels, input_size) = check_set(data.train, data.class_names.len())?;
    let spec = NetworkSpec {
        in_channels,
        input_size,
        stem_pool,
        channels,
        n_classes: data.class_names.len(),
    };
    let network = Network::new(spec, Normalization::imagenet(in_channels), config.seed)?;
    train_from(config, data, strategy, fold_index, network)
}

/// Trains starting from `network`, e.g. pretrained weights.
pub fn train_from(
    config: &TrainConfig,
    data: FoldData<'_>,
    strategy: MaskingStrategy,
    fold_index: usize,
    mut network: Network,
) -> Result<TrainedModel> {
    config.validate()?;
    let n_classes = data.class_names.len();
    check_set(data.train, n_classes)?;
    if network.spec.n_classes != n_classes {
        return Err(Error::shape(
            format!("{} classes", network.spec.n_classes),
            format!("{n_classes} classes"),
        ));
    }
    if !data.val.is_empty() {
        check_set(data.val, n_classes)?;
    }
    let weights = match config.loss {
        LossKind::CrossEntropy => ClassWeights::uniform(n_classes),
        LossKind::WeightedCrossEntropy => ClassWeights::inverse_frequency(&data.train.labels, n_classes),
    };
    let skip_below = if config.frozen_prefix {
        network.frozen_prefix_range().end
    } else {
        0
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = Adam::new(network.params().len(), config.learning_rate);
    let mut stopper = EarlyStopping::new(config.early_stop_patience, config.early_stop_delta);
    let mut best = network.clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(config.batch_size) {
            let augmented: Vec<Image>;
            let images: Vec<&Image> = if config.augmentations.is_empty() {
                batch.iter().map(|&i| &data.train.images[i]).collect()
            } else {
                augmented = batch
                    .iter()
                    .map(|&i| augment(&data.train.images[i], &config.augmentations, &mut rng))
                    .collect();
                augmented.iter().collect()
            };
            let labels: Vec<&[bool]> = batch.iter().map(|&i| data.train.labels[i].as_slice()).collect();
            let cache = network.forward(&images, true)?;
            let (loss, dlogits) = weighted_bce(&cache.logits, &labels, &weights);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            let grad = network.backward(&cache, &dlogits, skip_below);
            adam.step(network.params_mut(), &grad, skip_below);
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let train_loss = loss_sum / seen as f64;

        let (val_loss, val_auc) = if data.val.is_empty() {
            (train_loss, 0.5)
        } else {
            evaluate_loss(&network, data.val, &weights)?
        };
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_auc,
        });
        log::debug!("{strategy} fold {fold_index} epoch {epoch}: train {train_loss:.4} val {val_loss:.4} auc {val_auc:.3}");
        let decision = stopper.update(epoch, val_loss);
        if decision.improved {
            best = network.clone();
        }
        if decision.stop {
            break;
        }
    }

    Ok(TrainedModel {
        strategy,
        fold_index,
        class_names: data.class_names.to_vec(),
        config: config.clone(),
        history,
        best_epoch: stopper.best_epoch(),
        embedding_dim: best.spec.embedding_dim(),
        network: best,
    })
}

fn evaluate_loss(network: &Network, set: &EvalSet, weights: &ClassWeights) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut probs = Vec::with_capacity(set.len());
    for (imgs, labels) in set.images.chunks(INFERENCE_CHUNK).zip(set.labels.chunks(INFERENCE_CHUNK)) {
        let refs: Vec<&Image> = imgs.iter().collect();
        let out = network.forward(&refs, false)?;
        let lab: Vec<&[bool]> = labels.iter().map(Vec::as_slice).collect();
        let (loss, _) = weighted_bce(&out.logits, &lab, weights);
        loss_sum += loss * imgs.len() as f64;
        probs.extend(out.logits.rows().into_iter().map(|r| r.iter().map(|&z| sigmoid(z) as f64).collect::<Vec<_>>()));
    }
    let n_classes = network.spec.n_classes;
    let mut auc_sum = 0.0;
    for k in 0..n_classes {
        let scores: Vec<f64> = probs.iter().map(|p| p[k]).collect();
        auc_sum += auc_value(&scores, &set.class_labels(k))?;
    }
    Ok((loss_sum / set.len() as f64, auc_sum / n_classes as f64))
}

impl TrainedModel {
    /// Per-class sigmoid probabilities, one row per input image.
    pub fn predict(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFERENCE_CHUNK) {
            let refs: Vec<&Image> = chunk.iter().collect();
            let f = self.network.forward(&refs, false)?;
            for row in f.logits.rows() {
                let p: Vec<f64> = row.iter().map(|&z| sigmoid(z) as f64).collect();
                if p.iter().any(|v| !v.is_finite()) {
                    return Err(Error::ModelOutput(format!("{p:?}")));
                }
                out.push(p);
            }
        }
        Ok(out)
    }

    /// Probability column of one class.
    pub fn predict_class(&self, images: &[Image], class_index: usize) -> Result<Vec<f64>> {
        if class_index >= self.class_names.len() {
            return Err(Error::InvalidArgument(format!("class index {class_index} out of range")));
        }
        Ok(self.predict(images)?.into_iter().map(|p| p[class_index]).collect())
    }

    /// Pooled penultimate-layer activations, one row per image.
    pub fn embed(&self, images: &[Image]) -> Result<Array2<f32>> {
        let mut out = Array2::<f32>::zeros((images.len(), self.embedding_dim));
        for (c, chunk) in images.chunks(INFERENCE_CHUNK).enumerate() {
            let refs: Vec<&Image> = chunk.iter().collect();
            let f = self.network.forward(&refs, false)?;
            let start = c * INFERENCE_CHUNK;
            out.slice_mut(ndarray::s![start..start + chunk.len(), ..]).assign(&f.embeddings);
        }
        Ok(out)
    }

    /// Hash of the weights; identifies the model in caches and run records.
    pub fn fingerprint(&self) -> String {
        self.network.fingerprint()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::mask_ops::write_bytes(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn history_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.history {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Trains one model per fold of `folds` on `strategy`-masked images. Fold `f`
/// uses seed `config.seed + f`.
pub fn train_folds<S: SampleStore + ?Sized>(
    config: &TrainConfig,
    store: &S,
    manifest: &DatasetManifest,
    folds: &FoldAssignment,
    strategy: MaskingStrategy,
    preprocess: PreprocessConfig,
) -> Result<Vec<TrainedModel>> {
    let mut models = Vec::with_capacity(folds.k());
    for (f, fold) in folds.folds.iter().enumerate() {
        let train_set = EvalSet::load(store, manifest, &fold.train_ids, strategy, preprocess)?;
        let val_set = EvalSet::load(store, manifest, &fold.val_ids, strategy, preprocess)?;
        let cfg = TrainConfig {
            seed: config.seed.wrapping_add(f as u64),
            ..config.clone()
        };
        let data = FoldData {
            train: &train_set,
            val: &val_set,
            class_names: &manifest.class_names,
        };
        let model = train(&cfg, data, strategy, f)?;
        log::info!(
            "trained {strategy} fold {f}: {} epochs, best {}",
            model.history.len(),
            model.best_epoch
        );
        models.push(model);
    }
    Ok(models)
}
