use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::plan::StudyPlan;
use crate::error::{Error, Result};
use crate::mask_ops::MaskingStrategy;

pub const OTHER: &str = "other";
pub const NONE: &str = "none";
/// Model probability at which the model is taken to call a condition present.
pub const MODEL_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub item_id: String,
    pub annotator_id: String,
    /// Class names, `other`, or exactly `none`.
    pub selected_conditions: Vec<String>,
    #[serde(default)]
    pub comment: String,
    /// RFC 3339 time of submission, assigned by the server.
    #[serde(default)]
    pub timestamp: String,
    pub elapsed_seconds: f64,
}

impl Annotation {
    pub fn validate(&self, class_names: &[String]) -> Result<()> {
        if self.annotator_id.trim().is_empty() {
            return Err(Error::InvalidArgument("empty annotator id".into()));
        }
        if self.selected_conditions.is_empty() {
            return Err(Error::InvalidArgument(format!("select at least one condition or `{NONE}`")));
        }
        for c in &self.selected_conditions {
            if c != OTHER && c != NONE && !class_names.contains(c) {
                return Err(Error::InvalidArgument(format!("unknown condition `{c}`")));
            }
        }
        if self.selected_conditions.iter().any(|c| c == NONE) && self.selected_conditions.len() > 1 {
            return Err(Error::InvalidArgument(format!("`{NONE}` excludes other selections")));
        }
        if !self.elapsed_seconds.is_finite() || self.elapsed_seconds < 0.0 {
            return Err(Error::InvalidArgument(format!("elapsed_seconds {}", self.elapsed_seconds)));
        }
        Ok(())
    }

    pub fn marks(&self, condition: &str) -> bool {
        self.selected_conditions.iter().any(|c| c == condition)
    }
}

/// Latest annotation per (annotator, item), in log order of first appearance.
pub fn current_annotations(log: &[Annotation]) -> Vec<Annotation> {
    let mut slot: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut out: Vec<Annotation> = Vec::new();
    for a in log {
        match slot.get(&(a.annotator_id.as_str(), a.item_id.as_str())) {
            Some(&i) => out[i] = a.clone(),
            None => {
                slot.insert((a.annotator_id.as_str(), a.item_id.as_str()), out.len());
                out.push(a.clone());
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub strategy: MaskingStrategy,
    pub condition: String,
    /// Annotated (item, condition) pairs where the condition is present.
    pub present: usize,
    /// Of those, pairs where the reader marked the condition.
    pub found: usize,
    /// Reader marked the condition where it is absent.
    pub false_positives: usize,
    /// `found / present`, undefined without present cases.
    pub sensitivity: Option<f64>,
    /// Annotations on items selected for this condition.
    pub selected_annotations: usize,
    /// Of those, annotations whose mark matches the model's call.
    pub model_agreements: usize,
    pub model_agreement: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyTotals {
    pub strategy: MaskingStrategy,
    pub present: usize,
    pub found: usize,
    pub false_positives: usize,
    pub sensitivity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub rows: Vec<AgreementRow>,
    pub totals: Vec<StrategyTotals>,
    /// Annotations whose item is not in the plan.
    pub ignored: usize,
}

impl AgreementReport {
    pub fn row(&self, strategy: MaskingStrategy, condition: &str) -> Option<&AgreementRow> {
        self.rows.iter().find(|r| r.strategy == strategy && r.condition == condition)
    }

    pub fn totals_for(&self, strategy: MaskingStrategy) -> Option<&StrategyTotals> {
        self.totals.iter().find(|t| t.strategy == strategy)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Reader detection statistics per strategy and condition. `ground_truth`
/// maps image ids to the conditions present. Pure in its inputs; duplicate
/// submissions are reduced to the latest.
pub fn compute_agreement(
    annotations: &[Annotation],
    ground_truth: &BTreeMap<String, Vec<String>>,
    plan: &StudyPlan,
    class_names: &[String],
) -> Result<AgreementReport> {
    let strategies: BTreeSet<MaskingStrategy> = plan.items.iter().map(|i| i.strategy).collect();
    let mut rows: BTreeMap<(MaskingStrategy, usize), AgreementRow> = BTreeMap::new();
    for &s in &strategies {
        for (k, c) in class_names.iter().enumerate() {
            rows.insert(
                (s, k),
                AgreementRow {
                    strategy: s,
                    condition: c.clone(),
                    present: 0,
                    found: 0,
                    false_positives: 0,
                    sensitivity: None,
                    selected_annotations: 0,
                    model_agreements: 0,
                    model_agreement: None,
                },
            );
        }
    }
    let mut ignored = 0;
    for a in current_annotations(annotations) {
        let Some(item) = plan.item(&a.item_id) else {
            ignored += 1;
            continue;
        };
        let truth = ground_truth
            .get(&item.image_id)
            .ok_or_else(|| Error::NotFound(format!("ground truth for image {}", item.image_id)))?;
        for (k, c) in class_names.iter().enumerate() {
            let row = rows.get_mut(&(item.strategy, k)).expect("row per strategy and class");
            let present = truth.contains(c);
            let marked = a.marks(c);
            if present {
                row.present += 1;
                row.found += usize::from(marked);
            } else if marked {
                row.false_positives += 1;
            }
            if let Some(basis) = item.basis.as_ref().filter(|b| &b.condition == c) {
                row.selected_annotations += 1;
                let model_call = basis.probability >= MODEL_THRESHOLD;
                row.model_agreements += usize::from(model_call == marked);
            }
        }
    }
    let rows: Vec<AgreementRow> = rows
        .into_values()
        .map(|mut r| {
            r.sensitivity = ratio(r.found, r.present);
            r.model_agreement = ratio(r.model_agreements, r.selected_annotations);
            r
        })
        .collect();
    let totals = strategies
        .iter()
        .map(|&s| {
            let mine = rows.iter().filter(|r| r.strategy == s);
            let (present, found, fp) = mine.fold((0, 0, 0), |(p, f, x), r| (p + r.present, f + r.found, x + r.false_positives));
            StrategyTotals {
                strategy: s,
                present,
                found,
                false_positives: fp,
                sensitivity: ratio(found, present),
            }
        })
        .collect();
    Ok(AgreementReport { rows, totals, ignored })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(item: &str, who: &str, sel: &[&str]) -> Annotation {
        Annotation {
            item_id: item.into(),
            annotator_id: who.into(),
            selected_conditions: sel.iter().map(|s| s.to_string()).collect(),
            comment: String::new(),
            timestamp: String::new(),
            elapsed_seconds: 1.0,
        }
    }

    #[test]
    fn validation() {
        let classes = vec!["a".to_string()];
        assert!(ann("x", "r", &["a", "other"]).validate(&classes).is_ok());
        assert!(ann("x", "r", &["none", "a"]).validate(&classes).is_err());
        assert!(ann("x", "r", &["b"]).validate(&classes).is_err());
        assert!(ann("x", "r", &[]).validate(&classes).is_err());
    }

    #[test]
    fn latest_submission_wins() {
        let log = vec![ann("i1", "r", &["a"]), ann("i2", "r", &["none"]), ann("i1", "r", &["none"])];
        let cur = current_annotations(&log);
        assert_eq!(cur.len(), 2);
        assert_eq!(cur[0].selected_conditions, vec!["none"]);
    }
}
