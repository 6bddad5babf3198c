use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature extractor. Only the small CNN can be trained in this crate;
/// DenseNet-121 is kept as the nominal full-scale backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backbone {
    #[serde(rename = "densenet121")]
    DenseNet121,
    SmallCnn {
        /// Output channels of each conv block.
        channels: Vec<usize>,
        /// Input average-pooling factor.
        stem_pool: usize,
    },
}

impl Backbone {
    pub fn small_cnn() -> Self {
        Backbone::SmallCnn {
            channels: vec![8, 16, 32],
            stem_pool: 2,
        }
    }

    /// Width of the pooled penultimate layer.
    pub fn embedding_dim(&self) -> usize {
        match self {
            Backbone::DenseNet121 => 1024,
            Backbone::SmallCnn { channels, .. } => channels.last().copied().unwrap_or(0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Per-class binary cross-entropy on sigmoid outputs.
    CrossEntropy,
    /// Same, with inverse-frequency class weights normalized to mean 1.
    WeightedCrossEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    /// Uniform rotation in `[-max_degrees, max_degrees]`, black fill.
    Rotation { max_degrees: f64 },
    HorizontalFlip { probability: f64 },
    /// Multiply intensities by a factor drawn uniformly from `[min, max]`.
    Brightness { min: f64, max: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub backbone: Backbone,
    pub frozen_prefix: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub loss: LossKind,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub early_stop_delta: f64,
    #[serde(default)]
    pub augmentations: Vec<Augmentation>,
    #[serde(default)]
    pub seed: u64,
}

fn table_augmentations() -> Vec<Augmentation> {
    vec![
        Augmentation::Rotation { max_degrees: 45.0 },
        Augmentation::HorizontalFlip { probability: 0.5 },
        Augmentation::Brightness { min: 0.7, max: 1.1 },
    ]
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::chest()
    }
}

impl TrainConfig {
    /// Chest X-ray protocol.
    pub fn chest() -> Self {
        Self {
            backbone: Backbone::DenseNet121,
            frozen_prefix: true,
            learning_rate: 1e-5,
            batch_size: 32,
            loss: LossKind::CrossEntropy,
            max_epochs: 250,
            early_stop_patience: 10,
            early_stop_delta: 1e-3,
            augmentations: table_augmentations(),
            seed: 0,
        }
    }

    /// Fundus protocol: higher learning rate and class-weighted loss.
    pub fn fundus() -> Self {
        Self {
            learning_rate: 1e-4,
            loss: LossKind::WeightedCrossEntropy,
            ..Self::chest()
        }
    }

    /// CPU-sized settings for the small CNN on synthetic data.
    pub fn desk() -> Self {
        Self {
            backbone: Backbone::small_cnn(),
            frozen_prefix: false,
            learning_rate: 1e-3,
            batch_size: 32,
            loss: LossKind::CrossEntropy,
            max_epochs: 30,
            early_stop_patience: 5,
            early_stop_delta: 1e-3,
            augmentations: Vec::new(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::InvalidArgument("early_stop_patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument("batch_size and max_epochs must be positive".into()));
        }
        if self.early_stop_delta < 0.0 {
            return Err(Error::InvalidArgument("early_stop_delta must be non-negative".into()));
        }
        for a in &self.augmentations {
            let ok = match *a {
                Augmentation::Rotation { max_degrees } => max_degrees >= 0.0,
                Augmentation::HorizontalFlip { probability } => (0.0..=1.0).contains(&probability),
                Augmentation::Brightness { min, max } => min > 0.0 && min <= max,
            };
            if !ok {
                return Err(Error::InvalidArgument(format!("invalid augmentation {a:?}")));
            }
        }
        Ok(())
    }
}
