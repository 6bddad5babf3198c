use serde::{Deserialize, Serialize};

use super::delong::{delong_test, significant_across_folds};
use super::matrix::{defined, MeanStd, Predictions};
use crate::data::{materialize, DatasetManifest, EvalSet, SampleStore};
use crate::error::{Error, Result};
use crate::mask_ops::{MaskingStrategy, PreprocessConfig};
use crate::training::TrainedModel;

pub const ALPHA: f64 = 0.05;
pub const MIN_SIGNIFICANT_FOLDS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodRow {
    pub strategy: MaskingStrategy,
    pub class_name: String,
    pub fold_aucs: Vec<f64>,
    pub auc: MeanStd,
    /// Best strategy for the class and significantly better than every other.
    pub starred: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodTable {
    pub dataset: String,
    pub rows: Vec<OodRow>,
}

impl OodTable {
    pub fn row(&self, strategy: MaskingStrategy, class_name: &str) -> Option<&OodRow> {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy && r.class_name == class_name)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["dataset", "class", "strategy", "auc_mean", "auc_std", "starred"])?;
        for r in &self.rows {
            w.write_record([
                self.dataset.as_str(),
                r.class_name.as_str(),
                r.strategy.as_str(),
                &r.auc.mean.to_string(),
                &r.auc.std.to_string(),
                &r.starred.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Evaluates every (strategy, fold) model on the full, unmasked images of an
/// external dataset.
pub fn ood_evaluate<S: SampleStore + ?Sized>(
    models: &[TrainedModel],
    store: &S,
    external: &DatasetManifest,
    preprocess: PreprocessConfig,
) -> Result<OodTable> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidArgument("no models to evaluate".into()))?;
    if let Some(m) = models.iter().find(|m| m.class_names != external.class_names) {
        return Err(Error::Schema(format!(
            "external classes {:?} differ from model classes {:?}",
            external.class_names, m.class_names
        )));
    }
    let set = EvalSet::collect(materialize(store, external, MaskingStrategy::Full, 0, preprocess))?;
    let preds = Predictions::compute(models, &set)?;
    ood_table_from_predictions(&external.name, &preds, &first.class_names)
}

pub fn ood_table_from_predictions(dataset: &str, preds: &Predictions, class_names: &[String]) -> Result<OodTable> {
    let mut strategies: Vec<MaskingStrategy> = preds.by_model.keys().map(|(s, _)| *s).collect();
    strategies.dedup();
    let folds_of = |s: MaskingStrategy| -> Vec<usize> {
        preds
            .by_model
            .keys()
            .filter(|(t, _)| *t == s)
            .map(|(_, f)| *f)
            .collect()
    };
    let mut rows = Vec::new();
    for (ci, name) in class_names.iter().enumerate() {
        let labels = preds.class_labels(ci);
        let mut class_rows: Vec<OodRow> = Vec::new();
        for &s in &strategies {
            let fold_aucs = folds_of(s)
                .into_iter()
                .map(|f| preds.auc(s, f, ci).expect("key present"))
                .collect::<Result<Vec<_>>>()?;
            class_rows.push(OodRow {
                strategy: s,
                class_name: name.clone(),
                auc: MeanStd::of(&fold_aucs),
                fold_aucs,
                starred: false,
            });
        }
        let best = class_rows
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.auc.mean.total_cmp(&b.1.auc.mean))
            .map(|(i, _)| i);
        if let Some(b) = best {
            let best_strategy = class_rows[b].strategy;
            let mut beats_all = class_rows.len() > 1;
            for other in &class_rows {
                if other.strategy == best_strategy {
                    continue;
                }
                // fold-paired tests; a fold counts only if the best model wins it
                let mut p_values = Vec::new();
                for f in folds_of(best_strategy) {
                    let (Some(a), Some(o)) = (preds.scores(best_strategy, f, ci), preds.scores(other.strategy, f, ci))
                    else {
                        continue;
                    };
                    let p = match defined(delong_test(&a, &o, &labels))? {
                        Some(r) if r.auc_a > r.auc_b => r.p_value,
                        _ => 1.0,
                    };
                    p_values.push(p);
                }
                let significant = p_values.len() >= MIN_SIGNIFICANT_FOLDS
                    && significant_across_folds(&p_values, ALPHA, MIN_SIGNIFICANT_FOLDS)?;
                if !significant {
                    beats_all = false;
                    break;
                }
            }
            class_rows[b].starred = beats_all;
        }
        rows.extend(class_rows);
    }
    Ok(OodTable {
        dataset: dataset.to_string(),
        rows,
    })
}
