//! DeLong's test for two correlated ROC curves, using the mid-rank
//! formulation of the structural components.

use serde::{Deserialize, Serialize};

use super::auc::midranks;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelongResult {
    pub auc_a: f64,
    pub auc_b: f64,
    pub variance_diff: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Placement values of one classifier: `v10[i]` is the fraction of negatives
/// scored below positive `i`, `v01[j]` the fraction of positives scored above
/// negative `j` (ties count one half).
#[derive(Clone, Debug, PartialEq)]
pub struct StructuralComponents {
    pub auc: f64,
    pub v10: Vec<f64>,
    pub v01: Vec<f64>,
}

fn split_by_label(scores: &[f64], labels: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} labels", scores.len()), format!("{} labels", labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.len() < 2 || neg.len() < 2 {
        return Err(Error::DegenerateLabels(format!(
            "need at least 2 positives and 2 negatives, got {} and {}",
            pos.len(),
            neg.len()
        )));
    }
    Ok((pos, neg))
}

pub fn structural_components(scores: &[f64], labels: &[bool]) -> Result<StructuralComponents> {
    let (pos, neg) = split_by_label(scores, labels)?;
    let (m, n) = (pos.len(), neg.len());
    let tx = midranks(&pos);
    let ty = midranks(&neg);
    let combined: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    let tz = midranks(&combined);
    // each numerator below is an exact half-integer count, divided once
    let v10 = (0..m).map(|i| (tz[i] - tx[i]) / n as f64).collect();
    let v01 = (0..n).map(|j| (m as f64 - (tz[m + j] - ty[j])) / m as f64).collect();
    let wins = tz[..m].iter().sum::<f64>() - (m * (m + 1)) as f64 / 2.0;
    Ok(StructuralComponents {
        auc: wins / (m as f64 * n as f64),
        v10,
        v01,
    })
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// DeLong variance estimate of a single AUC.
pub fn delong_variance(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let c = structural_components(scores, labels)?;
    Ok(sample_variance(&c.v10) / c.v10.len() as f64 + sample_variance(&c.v01) / c.v01.len() as f64)
}

/// Two-sided test of `auc(scores_a) == auc(scores_b)` on the same labels.
pub fn delong_test(scores_a: &[f64], scores_b: &[f64], labels: &[bool]) -> Result<DelongResult> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::shape(format!("{} scores", scores_a.len()), scores_b.len()));
    }
    let a = structural_components(scores_a, labels)?;
    let b = structural_components(scores_b, labels)?;
    // variance of the difference of the paired components equals
    // var(a) + var(b) - 2 cov(a, b) and is exactly zero for identical inputs
    let d10: Vec<f64> = a.v10.iter().zip(&b.v10).map(|(x, y)| x - y).collect();
    let d01: Vec<f64> = a.v01.iter().zip(&b.v01).map(|(x, y)| x - y).collect();
    let variance_diff = (sample_variance(&d10) / d10.len() as f64 + sample_variance(&d01) / d01.len() as f64).max(0.0);
    let (z, p_value) = if variance_diff > 0.0 {
        let z = (a.auc - b.auc) / variance_diff.sqrt();
        (z, libm::erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0))
    } else if a.auc == b.auc {
        (0.0, 1.0)
    } else {
        return Err(Error::NumericalDegeneracy {
            auc_a: a.auc,
            auc_b: b.auc,
        });
    };
    Ok(DelongResult {
        auc_a: a.auc,
        auc_b: b.auc,
        variance_diff,
        z,
        p_value,
    })
}

/// Whether a comparison is significant in at least `min_folds` folds, i.e.
/// `p < alpha` strictly.
pub fn significant_across_folds(p_values: &[f64], alpha: f64, min_folds: usize) -> Result<bool> {
    if p_values.is_empty() {
        return Err(Error::InvalidArgument("no p-values given".into()));
    }
    if p_values.len() < min_folds {
        return Err(Error::InvalidArgument(format!(
            "{} folds cannot reach the required {min_folds}",
            p_values.len()
        )));
    }
    Ok(p_values.iter().filter(|&&p| p < alpha).count() >= min_folds)
}
