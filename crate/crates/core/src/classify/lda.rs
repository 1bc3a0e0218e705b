//! Linear discriminant analysis: one Gaussian per class with a shared
//! covariance, combined with the class priors through Bayes' rule.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{require_nonempty, softmax2, Dataset};
use crate::error::{Error, Result};
use crate::features::Label;

/// Ridge added to the pooled covariance, relative to its mean diagonal.
const RIDGE_REL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lda {
    mean_low: Vec<f64>,
    mean_high: Vec<f64>,
    /// Inverse of the regularised pooled covariance, row-major.
    precision: Vec<f64>,
    log_prior_low: f64,
    log_prior_high: f64,
}

impl Lda {
    pub fn fit(data: &Dataset) -> Result<Self> {
        require_nonempty(data)?;
        let dim = data.n_features();
        let n_low = data.count(Label::Low);
        let n_high = data.count(Label::High);
        if n_low < 2 || n_high < 2 {
            return Err(Error::Training(format!(
                "LDA needs at least 2 rows per class, got {n_low} low and {n_high} high"
            )));
        }

        let class_mean = |label: Label, count: usize| -> Vec<f64> {
            let mut m = vec![0.0; dim];
            for (row, _) in data.x.iter().zip(&data.y).filter(|(_, &y)| y == label) {
                for (acc, v) in m.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            m.iter_mut().for_each(|v| *v /= count as f64);
            m
        };
        let mean_low = class_mean(Label::Low, n_low);
        let mean_high = class_mean(Label::High, n_high);

        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for (row, &y) in data.x.iter().zip(&data.y) {
            let mu = if y == Label::High { &mean_high } else { &mean_low };
            let d = DVector::from_iterator(dim, row.iter().zip(mu).map(|(a, b)| a - b));
            cov += &d * d.transpose();
        }
        cov /= (data.len() - 2) as f64;

        let trace = cov.trace();
        if !(trace > 0.0) || !trace.is_finite() {
            return Err(Error::Training(format!(
                "pooled covariance is degenerate: feature {} has zero within-class variance",
                degenerate_feature(&cov)
            )));
        }
        let ridge = RIDGE_REL * trace / dim as f64;
        for i in 0..dim {
            cov[(i, i)] += ridge;
        }
        let chol = cov.clone().cholesky().ok_or_else(|| {
            Error::Training(format!(
                "pooled covariance is singular after regularisation (feature {})",
                degenerate_feature(&cov)
            ))
        })?;
        let inv = chol.inverse();
        if inv.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training(format!(
                "pooled covariance inverse is not finite (feature {})",
                degenerate_feature(&cov)
            )));
        }

        let n = data.len() as f64;
        Ok(Self {
            mean_low,
            mean_high,
            precision: inv.transpose().as_slice().to_vec(),
            log_prior_low: (n_low as f64 / n).ln(),
            log_prior_high: (n_high as f64 / n).ln(),
        })
    }

    pub fn n_features(&self) -> usize {
        self.mean_low.len()
    }

    fn mahalanobis(&self, x: &[f64], mu: &[f64]) -> f64 {
        let dim = mu.len();
        let d: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
        let mut acc = 0.0;
        for i in 0..dim {
            let row = &self.precision[i * dim..(i + 1) * dim];
            acc += d[i] * row.iter().zip(&d).map(|(p, v)| p * v).sum::<f64>();
        }
        acc
    }

    /// Log joint densities up to the shared Gaussian normaliser, (low, high).
    pub fn log_scores(&self, x: &[f64]) -> (f64, f64) {
        (
            -0.5 * self.mahalanobis(x, &self.mean_low) + self.log_prior_low,
            -0.5 * self.mahalanobis(x, &self.mean_high) + self.log_prior_high,
        )
    }

    /// Class posteriors `(P(low | x), P(high | x))`.
    pub fn posteriors(&self, x: &[f64]) -> (f64, f64) {
        let (lo, hi) = self.log_scores(x);
        softmax2(lo, hi)
    }

    pub(crate) fn posterior_high(&self, x: &[f64]) -> f64 {
        self.posteriors(x).1
    }

    pub(crate) fn predict_row(&self, x: &[f64]) -> Label {
        let (lo, hi) = self.log_scores(x);
        if hi > lo {
            Label::High
        } else {
            Label::Low
        }
    }
}

fn degenerate_feature(cov: &DMatrix<f64>) -> usize {
    (0..cov.nrows())
        .min_by(|&a, &b| cov[(a, a)].total_cmp(&cov[(b, b)]))
        .unwrap_or(0)
}
