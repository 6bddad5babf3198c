//! AUC, DeLong tests for correlated ROC curves, cross-masking matrices,
//! dilation sweeps and out-of-distribution evaluation.

mod auc;
mod delong;
mod matrix;
mod ood;
mod sweep;

pub use auc::{auc, auc_value, midranks, Auc};
pub use delong::{
    delong_test, delong_variance, significant_across_folds, structural_components, DelongResult,
    StructuralComponents,
};
pub use matrix::{
    compare_cells, cross_masking_matrix, cross_masking_predictions, matrices_from_predictions, AucMatrix,
    CellComparison, MeanStd, Predictions,
};
pub use ood::{ood_evaluate, ood_table_from_predictions, OodRow, OodTable, ALPHA, MIN_SIGNIFICANT_FOLDS};
pub use sweep::{dilation_sweep, DilationCurve, Subgroup, SweepRequest, DEFAULT_DILATION_FACTORS};
