use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::auc::auc_value;
use super::delong::{delong_test, DelongResult};
use crate::data::EvalSet;
use crate::error::{Error, Result};
use crate::mask_ops::MaskingStrategy;
use crate::training::TrainedModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Arithmetic mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// Per-class grid of fold-aggregated AUCs; rows are training strategies,
/// columns evaluation strategies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucMatrix {
    pub class_name: String,
    pub strategies: Vec<MaskingStrategy>,
    pub cells: Vec<Vec<MeanStd>>,
    /// `fold_aucs[row][col][fold]`
    pub fold_aucs: Vec<Vec<Vec<f64>>>,
}

impl AucMatrix {
    pub fn cell(&self, train: MaskingStrategy, eval: MaskingStrategy) -> Option<MeanStd> {
        let r = self.strategies.iter().position(|&s| s == train)?;
        let c = self.strategies.iter().position(|&s| s == eval)?;
        Some(self.cells[r][c])
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "train_strategy", "eval_strategy", "fold", "auc"])?;
        for (r, train) in self.strategies.iter().enumerate() {
            for (c, eval) in self.strategies.iter().enumerate() {
                for (f, auc) in self.fold_aucs[r][c].iter().enumerate() {
                    w.write_record([
                        self.class_name.as_str(),
                        train.as_str(),
                        eval.as_str(),
                        &f.to_string(),
                        &auc.to_string(),
                    ])?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Predictions of every (training strategy, fold) model on one evaluation set.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub ids: Vec<String>,
    pub labels: Vec<Vec<bool>>,
    pub by_model: BTreeMap<(MaskingStrategy, usize), Vec<Vec<f64>>>,
}

impl Predictions {
    pub fn compute<'a>(models: impl IntoIterator<Item = &'a TrainedModel>, set: &EvalSet) -> Result<Self> {
        let mut by_model = BTreeMap::new();
        for m in models {
            by_model.insert((m.strategy, m.fold_index), m.predict(&set.images)?);
        }
        Ok(Self {
            ids: set.ids.clone(),
            labels: set.labels.clone(),
            by_model,
        })
    }

    pub fn scores(&self, strategy: MaskingStrategy, fold: usize, class_index: usize) -> Option<Vec<f64>> {
        self.by_model
            .get(&(strategy, fold))
            .map(|rows| rows.iter().map(|p| p[class_index]).collect())
    }

    pub fn class_labels(&self, class_index: usize) -> Vec<bool> {
        self.labels.iter().map(|l| l[class_index]).collect()
    }

    pub fn auc(&self, strategy: MaskingStrategy, fold: usize, class_index: usize) -> Option<Result<f64>> {
        self.scores(strategy, fold, class_index)
            .map(|s| auc_value(&s, &self.class_labels(class_index)))
    }
}

/// Lists the (strategy, fold) models and evaluation sets that are missing.
fn missing_entries(
    models: &[TrainedModel],
    eval_strategies: &[MaskingStrategy],
    available_eval: impl Fn(MaskingStrategy) -> bool,
    strategies: &[MaskingStrategy],
    k: usize,
) -> Vec<String> {
    let mut missing = Vec::new();
    for &s in strategies {
        for fold in 0..k {
            if !models.iter().any(|m| m.strategy == s && m.fold_index == fold) {
                missing.push(format!("model {s} fold {fold}"));
            }
        }
    }
    for &s in eval_strategies {
        if !available_eval(s) {
            missing.push(format!("test set {s}"));
        }
    }
    missing
}

/// Evaluates every model on every masked variant of the test set.
pub fn cross_masking_predictions(
    models: &[TrainedModel],
    test_sets: &BTreeMap<MaskingStrategy, EvalSet>,
    strategies: &[MaskingStrategy],
    k: usize,
) -> Result<BTreeMap<MaskingStrategy, Predictions>> {
    let missing = missing_entries(models, strategies, |s| test_sets.contains_key(&s), strategies, k);
    if !missing.is_empty() {
        return Err(Error::IncompleteRun(missing));
    }
    let selected: Vec<&TrainedModel> = models
        .iter()
        .filter(|m| strategies.contains(&m.strategy) && m.fold_index < k)
        .collect();
    strategies
        .iter()
        .map(|&s| Ok((s, Predictions::compute(selected.iter().copied(), &test_sets[&s])?)))
        .collect()
}

/// One matrix per class from precomputed predictions.
pub fn matrices_from_predictions(
    predictions: &BTreeMap<MaskingStrategy, Predictions>,
    class_names: &[String],
    strategies: &[MaskingStrategy],
    k: usize,
) -> Result<Vec<AucMatrix>> {
    let mut out = Vec::new();
    for (ci, name) in class_names.iter().enumerate() {
        let mut cells = Vec::new();
        let mut fold_aucs = Vec::new();
        for &train in strategies {
            let mut row = Vec::new();
            let mut row_folds = Vec::new();
            for &eval in strategies {
                let preds = predictions
                    .get(&eval)
                    .ok_or_else(|| Error::IncompleteRun(vec![format!("test set {eval}")]))?;
                let aucs = (0..k)
                    .map(|f| {
                        preds
                            .auc(train, f, ci)
                            .unwrap_or_else(|| Err(Error::IncompleteRun(vec![format!("model {train} fold {f}")])))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                row.push(MeanStd::of(&aucs));
                row_folds.push(aucs);
            }
            cells.push(row);
            fold_aucs.push(row_folds);
        }
        out.push(AucMatrix {
            class_name: name.clone(),
            strategies: strategies.to_vec(),
            cells,
            fold_aucs,
        });
    }
    Ok(out)
}

/// Cell `(r, c)` is the mean and std over folds of the AUC of the model
/// trained on strategy `r` evaluated on the test set masked with strategy `c`.
pub fn cross_masking_matrix(
    models: &[TrainedModel],
    test_sets: &BTreeMap<MaskingStrategy, EvalSet>,
    class_names: &[String],
    strategies: &[MaskingStrategy],
    k: usize,
) -> Result<Vec<AucMatrix>> {
    let preds = cross_masking_predictions(models, test_sets, strategies, k)?;
    matrices_from_predictions(&preds, class_names, strategies, k)
}

/// DeLong comparison of two matrix cells on the same test images, fold by fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellComparison {
    pub class_name: String,
    pub cell_a: (MaskingStrategy, MaskingStrategy),
    pub cell_b: (MaskingStrategy, MaskingStrategy),
    /// `None` where the test was undefined (degenerate labels or variance).
    pub folds: Vec<Option<DelongResult>>,
}

pub fn compare_cells(
    predictions: &BTreeMap<MaskingStrategy, Predictions>,
    class_names: &[String],
    class_index: usize,
    cell_a: (MaskingStrategy, MaskingStrategy),
    cell_b: (MaskingStrategy, MaskingStrategy),
    k: usize,
) -> Result<CellComparison> {
    let get = |(train, eval): (MaskingStrategy, MaskingStrategy), fold: usize| -> Result<(Vec<f64>, Vec<bool>)> {
        let p = predictions
            .get(&eval)
            .ok_or_else(|| Error::IncompleteRun(vec![format!("test set {eval}")]))?;
        let s = p
            .scores(train, fold, class_index)
            .ok_or_else(|| Error::IncompleteRun(vec![format!("model {train} fold {fold}")]))?;
        Ok((s, p.class_labels(class_index)))
    };
    let mut folds = Vec::new();
    for f in 0..k {
        let (sa, ya) = get(cell_a, f)?;
        let (sb, yb) = get(cell_b, f)?;
        if ya != yb {
            return Err(Error::InvalidArgument("cells are not evaluated on the same labels".into()));
        }
        folds.push(defined(delong_test(&sa, &sb, &ya))?);
    }
    Ok(CellComparison {
        class_name: class_names[class_index].clone(),
        cell_a,
        cell_b,
        folds,
    })
}

/// Maps statistically undefined comparisons to `None`.
pub(crate) fn defined(r: Result<DelongResult>) -> Result<Option<DelongResult>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::DegenerateLabels(_)) | Err(Error::NumericalDegeneracy { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
        assert_eq!(MeanStd::of(&[0.7]).std, 0.0);
    }

    #[test]
    fn missing_models_listed() {
        let sets = BTreeMap::new();
        let err = cross_masking_matrix(&[], &sets, &["x".into()], &[MaskingStrategy::Full], 2).unwrap_err();
        match err {
            Error::IncompleteRun(v) => {
                assert_eq!(v, vec!["model FULL fold 0", "model FULL fold 1", "test set FULL"]);
            }
            e => panic!("{e}"),
        }
    }
}
