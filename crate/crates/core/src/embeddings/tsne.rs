//! Exact t-SNE (van der Maaten & Hinton) and the silhouette score.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            seed: 0,
        }
    }
}

fn squared_distances(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Conditional probabilities with a per-point bandwidth matched to the
/// perplexity by bisection, symmetrized into joint probabilities.
fn joint_probabilities(dist: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = dist.nrows();
    let target = perplexity.ln();
    let mut p = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut beta = 1.0;
        let row = dist.row(i);
        // shift by the nearest distance for numerical range
        let dmin = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
        let mut probs = vec![0.0; n];
        for _ in 0..100 {
            let mut sum = 0.0;
            for j in 0..n {
                probs[j] = if j == i { 0.0 } else { (-(row[j] - dmin) * beta).exp() };
                sum += probs[j];
            }
            let mut h = 0.0;
            for j in 0..n {
                probs[j] /= sum;
                if probs[j] > 1e-300 {
                    h -= probs[j] * probs[j].ln();
                }
            }
            let diff = h - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
            }
        }
        for j in 0..n {
            p[[i, j]] = probs[j];
        }
    }
    let pt = p.t().to_owned();
    let mut joint = (p + pt) / (2.0 * n as f64);
    joint.mapv_inplace(|v| v.max(1e-12));
    joint
}

/// Embeds the rows of `x` in two dimensions.
pub fn tsne(x: &Array2<f64>, config: &TsneConfig) -> Result<Array2<f64>> {
    let n = x.nrows();
    if (n as f64) < 3.0 * config.perplexity || n < 4 {
        return Err(Error::InvalidArgument(format!(
            "t-SNE needs at least 3 x perplexity = {} points, got {n}",
            3.0 * config.perplexity
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite input to t-SNE".into()));
    }
    let p = joint_probabilities(&squared_distances(x), config.perplexity);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y = Array2::from_shape_fn((n, 2), |_| normal.sample(&mut rng));
    let mut update = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut num = Array2::<f64>::zeros((n, n));
    let mut grad = Array2::<f64>::zeros((n, 2));

    for iter in 0..config.iterations {
        let exaggeration = if iter < config.exaggeration_iterations {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < config.exaggeration_iterations { 0.5 } else { 0.8 };
        let mut total = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dy0 = y[[i, 0]] - y[[j, 0]];
                let dy1 = y[[i, 1]] - y[[j, 1]];
                let v = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                num[[i, j]] = v;
                num[[j, i]] = v;
                total += 2.0 * v;
            }
        }
        grad.fill(0.0);
        for i in 0..n {
            let (mut g0, mut g1) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[[i, j]] / total).max(1e-12);
                let m = (exaggeration * p[[i, j]] - q) * num[[i, j]];
                g0 += m * (y[[i, 0]] - y[[j, 0]]);
                g1 += m * (y[[i, 1]] - y[[j, 1]]);
            }
            grad[[i, 0]] = 4.0 * g0;
            grad[[i, 1]] = 4.0 * g1;
        }
        for ((g, u), gain) in grad.iter().zip(update.iter_mut()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*u > 0.0) { *gain + 0.2 } else { (*gain * 0.8).max(0.01) };
            *u = momentum * *u - config.learning_rate * *gain * *g;
        }
        y += &update;
        for c in 0..2 {
            let mean = y.column(c).sum() / n as f64;
            y.column_mut(c).mapv_inplace(|v| v - mean);
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::ModelOutput("t-SNE diverged".into()));
    }
    Ok(y)
}

/// Mean silhouette coefficient with Euclidean distance. Points in singleton
/// clusters contribute 0.
pub fn silhouette_score(points: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let n = points.nrows();
    if labels.len() != n {
        return Err(Error::shape(format!("{n} labels"), labels.len()));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let sizes: Vec<usize> = (0..k).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::InvalidArgument("silhouette needs at least two clusters".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i != j {
                let d: f64 = points.row(i).iter().zip(points.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
                sums[labels[j]] += d.sqrt();
            }
        }
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}
