//! Gaussian naive Bayes. Features are treated as conditionally independent
//! given the class, each with its own univariate Gaussian.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{require_nonempty, softmax2, Dataset};
use crate::error::{Error, Result};
use crate::features::Label;

/// Per-class variances are floored at this fraction of the feature's
/// overall variance.
const VAR_FLOOR_REL: f64 = 1e-9;
/// Absolute floor for features that are constant over the whole set.
const VAR_FLOOR_ABS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMoments {
    pub log_prior: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl ClassMoments {
    /// `ln P(y) + sum_i ln N(x_i; mean_i, var_i)`.
    pub fn log_joint(&self, x: &[f64]) -> f64 {
        self.log_prior
            + x.iter()
                .zip(&self.mean)
                .zip(&self.var)
                .map(|((v, m), s2)| -0.5 * (2.0 * PI * s2).ln() - (v - m).powi(2) / (2.0 * s2))
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    low: ClassMoments,
    high: ClassMoments,
}

fn moments(rows: &[&Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

impl GaussianNb {
    pub fn fit(data: &Dataset) -> Result<Self> {
        require_nonempty(data)?;
        let dim = data.n_features();
        let select = |label: Label| -> Vec<&Vec<f64>> {
            data.x.iter().zip(&data.y).filter(|(_, &y)| y == label).map(|(r, _)| r).collect()
        };
        let low_rows = select(Label::Low);
        let high_rows = select(Label::High);
        if low_rows.is_empty() || high_rows.is_empty() {
            return Err(Error::Training(format!(
                "naive Bayes needs both classes, got {} low and {} high",
                low_rows.len(),
                high_rows.len()
            )));
        }
        let all: Vec<&Vec<f64>> = data.x.iter().collect();
        let (_, global_var) = moments(&all, dim);
        let floor: Vec<f64> = global_var.iter().map(|v| (VAR_FLOOR_REL * v).max(VAR_FLOOR_ABS)).collect();

        let n = data.len() as f64;
        let build = |rows: &[&Vec<f64>]| {
            let (mean, var) = moments(rows, dim);
            ClassMoments {
                log_prior: (rows.len() as f64 / n).ln(),
                mean,
                var: var.iter().zip(&floor).map(|(v, f)| v.max(*f)).collect(),
            }
        };
        Ok(Self {
            low: build(&low_rows),
            high: build(&high_rows),
        })
    }

    pub fn n_features(&self) -> usize {
        self.low.mean.len()
    }

    pub fn class_moments(&self, label: Label) -> &ClassMoments {
        match label {
            Label::Low => &self.low,
            Label::High => &self.high,
        }
    }

    pub(crate) fn posterior_high(&self, x: &[f64]) -> f64 {
        softmax2(self.low.log_joint(x), self.high.log_joint(x)).1
    }

    pub(crate) fn predict_row(&self, x: &[f64]) -> Label {
        if self.high.log_joint(x) > self.low.log_joint(x) {
            Label::High
        } else {
            Label::Low
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Label::{High, Low};

    #[test]
    fn single_feature_matches_gaussian_bayes() {
        let x = vec![vec![-70.0], vec![-72.0], vec![-74.0], vec![-60.0], vec![-61.0], vec![-65.0]];
        let y = vec![Low, Low, Low, High, High, High];
        let m = GaussianNb::fit(&Dataset::new(x, y).unwrap()).unwrap();
        // Closed-form 1-D Gaussian class densities with the same moments.
        let gauss = |v: f64, mu: f64, s2: f64| (-(v - mu).powi(2) / (2.0 * s2)).exp() / (2.0 * PI * s2).sqrt();
        let (mu_l, s_l) = (-72.0, 8.0 / 3.0);
        let (mu_h, s_h) = (-62.0, 14.0 / 3.0);
        for i in 0..200 {
            let v = -80.0 + i as f64 * 0.1;
            let expect = if gauss(v, mu_h, s_h) > gauss(v, mu_l, s_l) { High } else { Low };
            assert_eq!(m.predict_row(&[v]), expect, "at {v}");
        }
    }

    #[test]
    fn duplicated_column_runs() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, i as f64]).collect();
        let y = (0..10).map(|i| if i >= 5 { High } else { Low }).collect();
        let m = GaussianNb::fit(&Dataset::new(x, y).unwrap()).unwrap();
        assert_eq!(m.predict_row(&[9.0, 9.0]), High);
        assert_eq!(m.predict_row(&[0.0, 0.0]), Low);
    }

    #[test]
    fn constant_feature_is_floored() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![100.0, i as f64]).collect();
        let y = (0..10).map(|i| if i >= 5 { High } else { Low }).collect();
        let m = GaussianNb::fit(&Dataset::new(x, y).unwrap()).unwrap();
        assert!(m.class_moments(High).var[0] > 0.0);
        let p = m.posterior_high(&[100.0, 8.0]);
        assert!(p.is_finite() && p > 0.5);
    }

    #[test]
    fn missing_class_fails() {
        let d = Dataset::new(vec![vec![1.0], vec![2.0]], vec![Low, Low]).unwrap();
        assert!(matches!(GaussianNb::fit(&d), Err(Error::Training(_))));
    }
}
