//! k-nearest-neighbour majority vote in z-standardised feature space.

use serde::{Deserialize, Serialize};

use super::{require_nonempty, Dataset};
use crate::error::{Error, Result};
use crate::features::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    k: usize,
    center: Vec<f64>,
    /// Per-feature standard deviation; 1 for constant features.
    scale: Vec<f64>,
    /// Standardised training rows.
    points: Vec<Vec<f64>>,
    labels: Vec<Label>,
}

impl Knn {
    pub fn fit(data: &Dataset, k: usize) -> Result<Self> {
        require_nonempty(data)?;
        if k == 0 || k > data.len() {
            return Err(Error::Training(format!(
                "k must be in 1..={}, got {k}",
                data.len()
            )));
        }
        let dim = data.n_features();
        let n = data.len() as f64;
        let mut center = vec![0.0; dim];
        for r in &data.x {
            for (c, v) in center.iter_mut().zip(r) {
                *c += v;
            }
        }
        center.iter_mut().for_each(|c| *c /= n);
        let mut scale = vec![0.0; dim];
        for r in &data.x {
            for ((s, v), c) in scale.iter_mut().zip(r).zip(&center) {
                *s += (v - c).powi(2);
            }
        }
        for s in scale.iter_mut() {
            *s = (*s / n).sqrt();
            if !(*s > 0.0) {
                *s = 1.0;
            }
        }
        let mut model = Self {
            k,
            center,
            scale,
            points: Vec::new(),
            labels: data.y.clone(),
        };
        model.points = data.x.iter().map(|r| model.standardize(r)).collect();
        Ok(model)
    }

    pub fn n_features(&self) -> usize {
        self.center.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.center)
            .zip(&self.scale)
            .map(|((v, c), s)| (v - c) / s)
            .collect()
    }

    /// Number of high-risk labels among the `k` nearest training rows.
    /// Equal distances are resolved by training-row order.
    fn high_votes(&self, x: &[f64]) -> usize {
        let q = self.standardize(x);
        let mut dist: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, cmp);
        }
        dist[..self.k]
            .iter()
            .filter(|(_, i)| self.labels[*i] == Label::High)
            .count()
    }

    pub(crate) fn vote_fraction(&self, x: &[f64]) -> f64 {
        self.high_votes(x) as f64 / self.k as f64
    }

    pub(crate) fn predict_row(&self, x: &[f64]) -> Label {
        // A tied vote goes to the low-risk class.
        if 2 * self.high_votes(x) > self.k {
            Label::High
        } else {
            Label::Low
        }
    }
}
