use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Area under the ROC curve. `single_class` marks inputs with only positives
/// or only negatives, for which the value is 0.5 by convention.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Auc {
    pub value: f64,
    pub single_class: bool,
}

/// Mid-ranks (1-based) of `values`; tied values share the mean of their ranks.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged
        let r = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann-Whitney AUC with mid-rank tie handling: the probability that a random
/// positive outscores a random negative, ties counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<Auc> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} labels", scores.len()), format!("{} labels", labels.len())));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidArgument(format!("score {bad} is not comparable")));
    }
    let n1 = labels.iter().filter(|&&l| l).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Ok(Auc {
            value: 0.5,
            single_class: true,
        });
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    // rank_sum - n1(n1+1)/2 is the pairwise win count (ties as halves)
    let wins = rank_sum - (n1 * (n1 + 1)) as f64 / 2.0;
    Ok(Auc {
        value: wins / (n1 as f64 * n0 as f64),
        single_class: false,
    })
}

/// AUC of one probability column per class; single-class columns yield 0.5.
pub fn auc_value(scores: &[f64], labels: &[bool]) -> Result<f64> {
    auc(scores, labels).map(|a| a.value)
}
