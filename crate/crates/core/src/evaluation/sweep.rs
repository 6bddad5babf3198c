use serde::{Deserialize, Serialize};

use super::auc::auc_value;
use super::matrix::MeanStd;
use crate::data::{materialize_with, EvalSet, Sample, SampleStore};
use crate::error::{Error, Result};
use crate::mask_ops::{MaskingStrategy, PreprocessConfig};
use crate::training::TrainedModel;

pub const DEFAULT_DILATION_FACTORS: [i64; 10] = [0, 5, 10, 25, 50, 100, 150, 200, 300, 500];

/// Which images get their masks dilated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subgroup {
    All,
    PositivesOnly,
    NegativesOnly,
}

impl Subgroup {
    pub fn includes(self, positive: bool) -> bool {
        match self {
            Subgroup::All => true,
            Subgroup::PositivesOnly => positive,
            Subgroup::NegativesOnly => !positive,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Subgroup::All => "all",
            Subgroup::PositivesOnly => "positives_only",
            Subgroup::NegativesOnly => "negatives_only",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DilationCurve {
    pub class_name: String,
    /// Training strategy of the evaluated models.
    pub model_strategy: MaskingStrategy,
    /// Masking applied to the dilated test images.
    pub strategy: MaskingStrategy,
    pub subgroup: Subgroup,
    pub factors: Vec<i64>,
    pub auc_mean: Vec<f64>,
    pub auc_std: Vec<f64>,
    /// `fold_aucs[factor][fold]`
    pub fold_aucs: Vec<Vec<f64>>,
}

pub struct SweepRequest<'a> {
    pub strategy: MaskingStrategy,
    pub factors: &'a [i64],
    pub subgroup: Subgroup,
    pub class_index: usize,
    pub preprocess: PreprocessConfig,
}

/// AUC of each fold model over the whole test set while the masks of the
/// selected subgroup are dilated by each factor; other masks stay as they are.
pub fn dilation_sweep<S: SampleStore + ?Sized>(
    models: &[&TrainedModel],
    store: &S,
    test_samples: &[&Sample],
    request: &SweepRequest<'_>,
) -> Result<DilationCurve> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidArgument("no models to sweep".into()))?;
    if !request.strategy.needs_mask() {
        return Err(Error::InvalidArgument(format!(
            "dilation sweep needs a mask-based strategy, got {}",
            request.strategy
        )));
    }
    if request.factors.is_empty() || request.factors.windows(2).any(|w| w[0] >= w[1]) || request.factors[0] < 0 {
        return Err(Error::InvalidArgument(
            "dilation factors must be non-negative and strictly increasing".into(),
        ));
    }
    let ci = request.class_index;
    if ci >= first.class_names.len() {
        return Err(Error::InvalidArgument(format!("class index {ci} out of range")));
    }
    let mut fold_aucs = Vec::with_capacity(request.factors.len());
    for &factor in request.factors {
        let subgroup = request.subgroup;
        let set = EvalSet::collect(materialize_with(
            store,
            test_samples.to_vec(),
            request.strategy,
            request.preprocess,
            move |s: &Sample| if subgroup.includes(s.labels[ci]) { factor } else { 0 },
        ))?;
        let labels = set.class_labels(ci);
        let aucs = models
            .iter()
            .map(|m| auc_value(&m.predict_class(&set.images, ci)?, &labels))
            .collect::<Result<Vec<_>>>()?;
        fold_aucs.push(aucs);
    }
    let stats: Vec<MeanStd> = fold_aucs.iter().map(|a| MeanStd::of(a)).collect();
    Ok(DilationCurve {
        class_name: first.class_names[ci].clone(),
        model_strategy: first.strategy,
        strategy: request.strategy,
        subgroup: request.subgroup,
        factors: request.factors.to_vec(),
        auc_mean: stats.iter().map(|s| s.mean).collect(),
        auc_std: stats.iter().map(|s| s.std).collect(),
        fold_aucs,
    })
}

impl DilationCurve {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "model_strategy", "strategy", "subgroup", "factor", "auc_mean", "auc_std"])?;
        for i in 0..self.factors.len() {
            w.write_record([
                self.class_name.as_str(),
                self.model_strategy.as_str(),
                self.strategy.as_str(),
                self.subgroup.as_str(),
                &self.factors[i].to_string(),
                &self.auc_mean[i].to_string(),
                &self.auc_std[i].to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
