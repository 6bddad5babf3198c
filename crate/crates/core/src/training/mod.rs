//! Small-CNN training with early stopping, inference, checkpoints and the
//! tabular metadata baseline.

mod augment;
mod config;
mod network;
mod tabular;
mod trainer;

pub use augment::{augment, flip_horizontal, rotate};
pub use config::{Augmentation, Backbone, LossKind, TrainConfig};
pub use network::{Network, NetworkSpec, Normalization};
pub use tabular::{tabular_features, train_tabular_baseline, LogisticModel, TabularBaseline, TabularRow};
pub use trainer::{
    train, train_folds, train_from, weighted_bce, ClassWeights, EarlyStopping, EpochRecord, FoldData, StopDecision, TrainedModel,
};
