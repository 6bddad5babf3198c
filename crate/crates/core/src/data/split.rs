use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub k: usize,
    pub test_fraction: f64,
    pub seed: u64,
    /// Keep all images of a patient on the same side of every split.
    #[serde(default)]
    pub group_by_patient: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            k: 5,
            test_fraction: 0.2,
            seed: 0,
            group_by_patient: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

/// Held-out test set plus k train/validation folds over the remaining pool.
/// The same assignment is shared by every masking strategy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub test_ids: Vec<String>,
    pub folds: Vec<Fold>,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::mask_ops::write_bytes(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Splits `manifest` into a test set and `k` folds, stratified on the rarest
/// positive class and deterministic in `seed`.
pub fn split(manifest: &DatasetManifest, config: &SplitConfig) -> Result<FoldAssignment> {
    let k = config.k;
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if !(config.test_fraction > 0.0 && config.test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must be in (0, 1), got {}",
            config.test_fraction
        )));
    }
    let counts: Vec<usize> = (0..manifest.class_names.len())
        .map(|c| manifest.positives(c))
        .collect();
    if let Some((c, &n)) = counts.iter().enumerate().find(|(_, &n)| n < k) {
        return Err(Error::Stratification {
            class: manifest.class_names[c].clone(),
            positives: n,
            required: k,
        });
    }
    let rarest = counts
        .iter()
        .enumerate()
        .min_by_key(|&(i, &n)| (n, i))
        .map(|(i, _)| i)
        .expect("at least one class");

    // Units are patients when grouping, otherwise single images.
    let mut units: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for s in &manifest.samples {
        let key = match (&s.metadata.patient_id, config.group_by_patient) {
            (Some(p), true) => format!("patient:{p}"),
            _ => format!("image:{}", s.image_id),
        };
        units.entry(key).or_default().push(&s.image_id);
    }
    let positive_unit = |ids: &[&str]| {
        ids.iter()
            .any(|id| manifest.get(id).is_some_and(|s| s.labels[rarest]))
    };
    let mut strata: [Vec<Vec<&str>>; 2] = [Vec::new(), Vec::new()];
    for ids in units.into_values() {
        let pos = positive_unit(&ids);
        strata[usize::from(!pos)].push(ids);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for s in strata.iter_mut() {
        s.shuffle(&mut rng);
    }

    let n_units: usize = strata.iter().map(Vec::len).sum();
    let n_test = ((n_units as f64) * config.test_fraction).round() as usize;
    let quotas = largest_remainder(&[strata[0].len(), strata[1].len()], n_test);

    let mut test_ids = BTreeSet::new();
    let mut fold_val: Vec<BTreeSet<String>> = vec![BTreeSet::new(); k];
    let mut dealt = 0usize;
    for (stratum, quota) in strata.iter().zip(quotas) {
        for (i, unit) in stratum.iter().enumerate() {
            if i < quota {
                test_ids.extend(unit.iter().map(|s| s.to_string()));
            } else {
                fold_val[dealt % k].extend(unit.iter().map(|s| s.to_string()));
                dealt += 1;
            }
        }
    }
    let pool: BTreeSet<String> = fold_val.iter().flatten().cloned().collect();
    let folds = fold_val
        .into_iter()
        .map(|val| Fold {
            train_ids: pool.difference(&val).cloned().collect(),
            val_ids: val.into_iter().collect(),
        })
        .collect();
    Ok(FoldAssignment {
        test_ids: test_ids.into_iter().collect(),
        folds,
        seed: config.seed,
    })
}

fn largest_remainder(sizes: &[usize], total_quota: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let exact: Vec<f64> = sizes
        .iter()
        .map(|&n| n as f64 * total_quota as f64 / total as f64)
        .collect();
    let mut q: Vec<usize> = exact.iter().map(|v| v.floor() as usize).collect();
    let mut left = total_quota.saturating_sub(q.iter().sum());
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        if q[i] < sizes[i] {
            q[i] += 1;
            left -= 1;
        }
    }
    q
}
