//! Logistic regression on patient metadata, used to check how much of a
//! label is predictable without looking at the image.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, FoldAssignment, Projection, Sample, Sex};
use crate::error::{Error, Result};
use crate::evaluation::auc_value;

const RIDGE: f64 = 1e-4;
const MAX_ITER: usize = 100;
const TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularRow {
    pub birth_year: f64,
    pub sex: Sex,
    pub projection: Projection,
}

/// Feature rows of the samples with complete metadata, with the indices of
/// the retained samples.
pub fn tabular_features(samples: &[&Sample]) -> (Vec<TabularRow>, Vec<usize>) {
    let mut rows = Vec::new();
    let mut kept = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let m = &s.metadata;
        if let (Some(y), Some(sex), Some(p)) = (m.birth_year, m.sex, m.projection) {
            rows.push(TabularRow {
                birth_year: y as f64,
                sex,
                projection: p,
            });
            kept.push(i);
        }
    }
    (rows, kept)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Intercept, standardized birth year, male indicator, AP indicator.
    pub coefficients: Vec<f64>,
}

impl LogisticModel {
    /// Ridge-stabilized IRLS; the intercept is not penalized.
    pub fn fit(x: &DMatrix<f64>, y: &[bool]) -> Result<Self> {
        let pos = y.iter().filter(|&&v| v).count();
        if pos == 0 || pos == y.len() {
            return Err(Error::DegenerateLabels(format!("{pos} positives out of {}", y.len())));
        }
        let (n, d) = x.shape();
        let t = DVector::from_iterator(n, y.iter().map(|&v| if v { 1.0 } else { 0.0 }));
        let mut beta = DVector::<f64>::zeros(d);
        let mut penalty = DMatrix::<f64>::identity(d, d) * (RIDGE * n as f64);
        penalty[(0, 0)] = 0.0;
        for _ in 0..MAX_ITER {
            let eta = x * &beta;
            let p = eta.map(logistic);
            let w = p.map(|v| (v * (1.0 - v)).max(1e-12));
            let mut xtwx = penalty.clone();
            for i in 0..n {
                let row = x.row(i);
                xtwx += row.transpose() * row * w[i];
            }
            let grad = x.transpose() * (&t - &p) - &penalty * &beta;
            let step = xtwx
                .cholesky()
                .ok_or_else(|| Error::NumericalDegeneracy { auc_a: 0.0, auc_b: 0.0 })?
                .solve(&grad);
            beta += &step;
            if step.amax() < TOL {
                break;
            }
        }
        Ok(Self {
            coefficients: beta.iter().copied().collect(),
        })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let beta = DVector::from_column_slice(&self.coefficients);
        (x * beta).iter().map(|&e| logistic(e)).collect()
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// One logistic model per class plus the birth-year standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularBaseline {
    pub class_names: Vec<String>,
    pub year_mean: f64,
    pub year_std: f64,
    pub models: Vec<LogisticModel>,
}

impl TabularBaseline {
    fn design(&self, rows: &[TabularRow]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), 4, |i, j| {
            let r = &rows[i];
            match j {
                0 => 1.0,
                1 => (r.birth_year - self.year_mean) / self.year_std,
                2 => (r.sex == Sex::Male) as u8 as f64,
                _ => (r.projection == Projection::Ap) as u8 as f64,
            }
        })
    }

    /// Probability per row and class.
    pub fn predict(&self, rows: &[TabularRow]) -> Vec<Vec<f64>> {
        let x = self.design(rows);
        let cols: Vec<Vec<f64>> = self.models.iter().map(|m| m.predict(&x)).collect();
        (0..rows.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
    }

    /// AUC per class on the given rows.
    pub fn auc(&self, rows: &[TabularRow], labels: &[Vec<bool>]) -> Result<Vec<f64>> {
        let probs = self.predict(rows);
        (0..self.models.len())
            .map(|k| {
                let s: Vec<f64> = probs.iter().map(|p| p[k]).collect();
                let y: Vec<bool> = labels.iter().map(|l| l[k]).collect();
                auc_value(&s, &y)
            })
            .collect()
    }

    /// Trains one baseline per fold on its training ids and returns the
    /// fold-mean AUC per class on the test set.
    pub fn cross_validate(manifest: &DatasetManifest, folds: &FoldAssignment) -> Result<Vec<f64>> {
        let test = manifest.subset(&folds.test_ids);
        let (test_rows, kept) = tabular_features(&test);
        let test_labels: Vec<Vec<bool>> = kept.iter().map(|&i| test[i].labels.clone()).collect();
        let mut sums = vec![0.0; manifest.class_names.len()];
        for fold in &folds.folds {
            let train = manifest.subset(&fold.train_ids);
            let (rows, kept) = tabular_features(&train);
            let labels: Vec<Vec<bool>> = kept.iter().map(|&i| train[i].labels.clone()).collect();
            let model = train_tabular_baseline(&rows, &labels, &manifest.class_names)?;
            for (s, a) in sums.iter_mut().zip(model.auc(&test_rows, &test_labels)?) {
                *s += a;
            }
        }
        Ok(sums.into_iter().map(|s| s / folds.k() as f64).collect())
    }
}

pub fn train_tabular_baseline(
    rows: &[TabularRow],
    labels: &[Vec<bool>],
    class_names: &[String],
) -> Result<TabularBaseline> {
    if rows.len() != labels.len() {
        return Err(Error::shape(format!("{} label rows", rows.len()), labels.len()));
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no rows with complete metadata".into()));
    }
    let n = rows.len() as f64;
    let year_mean = rows.iter().map(|r| r.birth_year).sum::<f64>() / n;
    let var = rows.iter().map(|r| (r.birth_year - year_mean).powi(2)).sum::<f64>() / n;
    let year_std = if var > 0.0 { var.sqrt() } else { 1.0 };
    let mut baseline = TabularBaseline {
        class_names: class_names.to_vec(),
        year_mean,
        year_std,
        models: Vec::new(),
    };
    let x = baseline.design(rows);
    for (k, name) in class_names.iter().enumerate() {
        let y: Vec<bool> = labels.iter().map(|l| l[k]).collect();
        let model = LogisticModel::fit(&x, &y).map_err(|e| match e {
            Error::DegenerateLabels(msg) => Error::DegenerateLabels(format!("class `{name}`: {msg}")),
            other => other,
        })?;
        baseline.models.push(model);
    }
    Ok(baseline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(year: f64, male: bool, ap: bool) -> TabularRow {
        TabularRow {
            birth_year: year,
            sex: if male { Sex::Male } else { Sex::Female },
            projection: if ap { Projection::Ap } else { Projection::Pa },
        }
    }

    #[test]
    fn separable_table_has_unit_auc() {
        let rows: Vec<_> = (0..40).map(|i| row(1940.0 + i as f64, i % 2 == 0, i % 3 == 0)).collect();
        let labels: Vec<Vec<bool>> = (0..40).map(|i| vec![i >= 20]).collect();
        let m = train_tabular_baseline(&rows, &labels, &["x".into()]).unwrap();
        assert_eq!(m.auc(&rows, &labels).unwrap(), vec![1.0]);
    }

    #[test]
    fn single_class_labels_rejected() {
        let rows = vec![row(1950.0, true, false), row(1960.0, false, true)];
        let labels = vec![vec![true], vec![true]];
        assert!(matches!(
            train_tabular_baseline(&rows, &labels, &["x".into()]),
            Err(Error::DegenerateLabels(_))
        ));
    }

    #[test]
    fn matches_known_coefficients_on_large_sample() {
        // labels drawn from a known logistic model; IRLS recovers it
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = [-0.5, 1.0, 0.8, -0.6];
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..20_000 {
            let r = row(rng.random_range(1930.0..2000.0), rng.random_bool(0.5), rng.random_bool(0.4));
            rows.push(r);
        }
        let mean = rows.iter().map(|r| r.birth_year).sum::<f64>() / rows.len() as f64;
        let sd = (rows.iter().map(|r| (r.birth_year - mean).powi(2)).sum::<f64>() / rows.len() as f64).sqrt();
        for r in &rows {
            let z = truth[0]
                + truth[1] * (r.birth_year - mean) / sd
                + truth[2] * (r.sex == Sex::Male) as u8 as f64
                + truth[3] * (r.projection == Projection::Ap) as u8 as f64;
            labels.push(vec![rng.random_bool(logistic(z))]);
        }
        let m = train_tabular_baseline(&rows, &labels, &["x".into()]).unwrap();
        for (b, t) in m.models[0].coefficients.iter().zip(truth) {
            assert!((b - t).abs() < 0.1, "{b} vs {t}");
        }
    }
}
