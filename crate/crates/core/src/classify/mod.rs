//! Binary risk classifiers and their evaluation.
//!
//! Four model families share one contract: train on a [`Dataset`], then map
//! feature rows to [`Label`]s. Every model also exposes a continuous score,
//! the estimated probability of [`Label::High`], used for threshold sweeps.

mod bayes;
mod eval;
mod knn;
mod lda;
mod metrics;
mod tree;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bayes::GaussianNb;
pub use eval::{
    evaluate_repeated, precision_recall_curve, repeated_metrics, summarize, train_test_split, PrPoint,
};
pub use knn::Knn;
pub use lda::Lda;
pub use metrics::{confusion, metrics, ConfusionCounts, MetricSummary, Metrics, MetricsReport};
pub use tree::{DecisionTree, Impurity, Node};

use crate::error::{Error, Result};
use crate::features::{Feature, FeatureVector, Label};

/// Rectangular feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Label>,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<Label>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Format(format!("{} rows but {} labels", x.len(), y.len())));
        }
        if let Some(first) = x.first() {
            let dim = first.len();
            if let Some((i, row)) = x.iter().enumerate().find(|(_, r)| r.len() != dim) {
                return Err(Error::Format(format!(
                    "row {i} has {} features, expected {dim}",
                    row.len()
                )));
            }
            if x.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Format("feature values must be finite".into()));
            }
        }
        Ok(Self { x, y })
    }

    /// Labeled feature vectors projected onto `features`. Unlabeled rows are an error.
    pub fn from_vectors(rows: &[FeatureVector], features: &[Feature]) -> Result<Self> {
        let mut x = Vec::with_capacity(rows.len());
        let mut y = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            let label = r
                .label
                .ok_or_else(|| Error::Format(format!("row {i} has no label")))?;
            x.push(r.select(features));
            y.push(label);
        }
        Self::new(x, y)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn count(&self, label: Label) -> usize {
        self.y.iter().filter(|&&l| l == label).count()
    }

    pub fn has_both_classes(&self) -> bool {
        self.count(Label::High) > 0 && self.count(Label::Low) > 0
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// Same rows restricted to the given columns.
    pub fn columns(&self, cols: &[usize]) -> Self {
        Self {
            x: self.x.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect(),
            y: self.y.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dt,
    Lda,
    Nb,
    Knn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Dt, ModelKind::Lda, ModelKind::Nb, ModelKind::Knn];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dt => "DT",
            ModelKind::Lda => "LDA",
            ModelKind::Nb => "NB",
            ModelKind::Knn => "kNN",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dt" => Ok(ModelKind::Dt),
            "lda" => Ok(ModelKind::Lda),
            "nb" => Ok(ModelKind::Nb),
            "knn" => Ok(ModelKind::Knn),
            other => Err(Error::Format(format!("unknown classifier {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub impurity: Impurity,
    pub k: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            max_depth: 12,
            min_leaf: 5,
            impurity: Impurity::Gini,
            k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainedModel {
    Dt(DecisionTree),
    Lda(Lda),
    Nb(GaussianNb),
    Knn(Knn),
}

pub const MODEL_FORMAT: &str = "proxtrace-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: TrainedModel,
}

pub fn train(kind: ModelKind, data: &Dataset, hyper: &Hyper) -> Result<TrainedModel> {
    Ok(match kind {
        ModelKind::Dt => TrainedModel::Dt(DecisionTree::fit(data, hyper.max_depth, hyper.min_leaf, hyper.impurity)?),
        ModelKind::Lda => TrainedModel::Lda(Lda::fit(data)?),
        ModelKind::Nb => TrainedModel::Nb(GaussianNb::fit(data)?),
        ModelKind::Knn => TrainedModel::Knn(Knn::fit(data, hyper.k)?),
    })
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Dt(_) => ModelKind::Dt,
            TrainedModel::Lda(_) => ModelKind::Lda,
            TrainedModel::Nb(_) => ModelKind::Nb,
            TrainedModel::Knn(_) => ModelKind::Knn,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainedModel::Dt(m) => m.n_features(),
            TrainedModel::Lda(m) => m.n_features(),
            TrainedModel::Nb(m) => m.n_features(),
            TrainedModel::Knn(m) => m.n_features(),
        }
    }

    fn check_dim(&self, rows: &[Vec<f64>]) -> Result<()> {
        let want = self.n_features();
        match rows.iter().position(|r| r.len() != want) {
            Some(i) => Err(Error::Prediction(format!(
                "row {i} has {} features, model expects {want}",
                rows[i].len()
            ))),
            None => Ok(()),
        }
    }

    fn predict_row(&self, x: &[f64]) -> Label {
        match self {
            TrainedModel::Dt(m) => m.predict_row(x),
            TrainedModel::Lda(m) => m.predict_row(x),
            TrainedModel::Nb(m) => m.predict_row(x),
            TrainedModel::Knn(m) => m.predict_row(x),
        }
    }

    fn score_row(&self, x: &[f64]) -> f64 {
        match self {
            TrainedModel::Dt(m) => m.score_row(x),
            TrainedModel::Lda(m) => m.posterior_high(x),
            TrainedModel::Nb(m) => m.posterior_high(x),
            TrainedModel::Knn(m) => m.vote_fraction(x),
        }
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<Label>> {
        self.check_dim(rows)?;
        Ok(rows.iter().map(|r| self.predict_row(r)).collect())
    }

    /// Estimated probability of [`Label::High`] per row.
    pub fn scores(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_dim(rows)?;
        Ok(rows.iter().map(|r| self.score_row(r)).collect())
    }

    pub fn save<W: Write>(&self, out: W) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            model: self.clone(),
        };
        serde_json::to_writer_pretty(out, &file)?;
        Ok(())
    }

    pub fn load<R: Read>(input: R) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(input)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Format(format!("not a model file: format {:?}", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", file.version)));
        }
        Ok(file.model)
    }
}

pub(crate) fn require_nonempty(data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if data.n_features() == 0 {
        return Err(Error::Training("training rows have no features".into()));
    }
    Ok(())
}

/// Log-sum-exp normalised probabilities for the (Low, High) log scores.
pub(crate) fn softmax2(log_low: f64, log_high: f64) -> (f64, f64) {
    let m = log_low.max(log_high);
    let a = (log_low - m).exp();
    let b = (log_high - m).exp();
    let z = a + b;
    (a / z, b / z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let x = vec![vec![-90.0, 1.0], vec![-85.0, 2.0], vec![-60.0, 1.5], vec![-55.0, 2.5], vec![-88.0, 1.0], vec![-58.0, 2.0]];
        let y = vec![Label::Low, Label::Low, Label::High, Label::High, Label::Low, Label::High];
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn empty_rows_give_empty_predictions() {
        let hyper = Hyper { k: 3, min_leaf: 1, ..Default::default() };
        for kind in ModelKind::ALL {
            let m = train(kind, &toy(), &hyper).unwrap();
            assert!(m.predict(&[]).unwrap().is_empty(), "{kind}");
        }
    }

    #[test]
    fn dimension_mismatch_is_prediction_error() {
        let m = train(ModelKind::Nb, &toy(), &Hyper::default()).unwrap();
        assert!(matches!(m.predict(&[vec![1.0]]), Err(Error::Prediction(_))));
    }

    #[test]
    fn save_load_gives_identical_predictions() {
        let hyper = Hyper { k: 3, min_leaf: 1, ..Default::default() };
        let queries: Vec<Vec<f64>> = (0..50).map(|i| vec![-95.0 + i as f64, 0.5 + (i % 7) as f64 * 0.3]).collect();
        for kind in ModelKind::ALL {
            let m = train(kind, &toy(), &hyper).unwrap();
            let mut buf = Vec::new();
            m.save(&mut buf).unwrap();
            let text = String::from_utf8(buf.clone()).unwrap();
            assert!(text.contains(MODEL_FORMAT) && text.contains("\"version\": 1"));
            let back = TrainedModel::load(&buf[..]).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.predict(&queries).unwrap(), m.predict(&queries).unwrap());
            let (a, b) = (back.scores(&queries).unwrap(), m.scores(&queries).unwrap());
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn load_rejects_foreign_files() {
        assert!(TrainedModel::load(&br#"{"format":"other","version":1,"model":{"kind":"knn"}}"#[..]).is_err());
    }

    #[test]
    fn ragged_dataset_rejected() {
        assert!(Dataset::new(vec![vec![1.0], vec![1.0, 2.0]], vec![Label::Low, Label::High]).is_err());
        assert!(Dataset::new(vec![vec![1.0]], vec![]).is_err());
    }
}
