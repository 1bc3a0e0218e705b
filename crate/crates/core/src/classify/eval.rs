//! Repeated random hold-out evaluation and precision-recall sweeps.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::metrics::{confusion, metrics, MetricSummary, Metrics, MetricsReport};
use super::{train, Dataset, Hyper, ModelKind, TrainedModel};
use crate::error::{Error, Result};
use crate::features::Label;
use crate::protocol::slot_rng;

/// Shuffled `(train, test)` index split. The test part holds
/// `round(n * (1 - train_frac))` rows, at least one, and leaves at least
/// one training row.
pub fn train_test_split(n: usize, train_frac: f64, seed: u64, rep: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Domain(format!("split fraction must be in (0, 1), got {train_frac}")));
    }
    if n < 2 {
        return Err(Error::Degenerate(format!("cannot split {n} rows")));
    }
    let n_test = ((n as f64 * (1.0 - train_frac)).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut slot_rng(seed, rep));
    let test = idx.split_off(n - n_test);
    Ok((idx, test))
}

/// Metrics of every repetition, in repetition order.
pub fn repeated_metrics(
    data: &Dataset,
    kind: ModelKind,
    hyper: &Hyper,
    train_frac: f64,
    reps: usize,
    seed: u64,
) -> Result<Vec<Metrics>> {
    if !data.has_both_classes() {
        return Err(Error::Degenerate(format!(
            "dataset needs both classes, got {} high and {} low",
            data.count(Label::High),
            data.count(Label::Low)
        )));
    }
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let (tr, te) = train_test_split(data.len(), train_frac, seed, rep as u64)?;
            let model = train(kind, &data.subset(&tr), hyper)?;
            let test = data.subset(&te);
            let pred = model.predict(&test.x)?;
            Ok(metrics(&confusion(&test.y, &pred)?))
        })
        .collect()
}

pub fn summarize(per_rep: &[Metrics]) -> Result<MetricsReport> {
    if per_rep.len() < 2 {
        return Err(Error::Domain(format!(
            "confidence interval needs at least 2 repetitions, got {}",
            per_rep.len()
        )));
    }
    let pick = |f: fn(&Metrics) -> f64| MetricSummary::from_values(&per_rep.iter().map(f).collect::<Vec<_>>());
    Ok(MetricsReport {
        precision: pick(|m| m.precision),
        recall: pick(|m| m.recall),
        f1: pick(|m| m.f1),
        accuracy: pick(|m| m.accuracy),
        reps: per_rep.len(),
    })
}

/// Mean and empirical 95% band of each metric over `reps` random splits.
pub fn evaluate_repeated(
    data: &Dataset,
    kind: ModelKind,
    hyper: &Hyper,
    train_frac: f64,
    reps: usize,
    seed: u64,
) -> Result<MetricsReport> {
    if reps < 2 {
        return Err(Error::Domain(format!(
            "confidence interval needs at least 2 repetitions, got {reps}"
        )));
    }
    summarize(&repeated_metrics(data, kind, hyper, train_frac, reps, seed)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    /// Rows scoring at least this are predicted high risk.
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// One point per distinct score, from the highest threshold down.
pub fn precision_recall_curve(model: &TrainedModel, data: &Dataset) -> Result<Vec<PrPoint>> {
    if !data.has_both_classes() {
        return Err(Error::Degenerate("precision-recall curve needs both classes".into()));
    }
    let scores = model.scores(&data.x)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let positives = data.count(Label::High);

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            match data.y[order[i]] {
                Label::High => tp += 1,
                Label::Low => fp += 1,
            }
            i += 1;
        }
        if tp == 0 {
            continue;
        }
        points.push(PrPoint {
            threshold,
            recall: tp as f64 / positives as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Label::{High, Low};

    fn separable() -> Dataset {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![if i < 20 { -80.0 } else { -55.0 } + (i % 5) as f64]).collect();
        let y = (0..40).map(|i| if i < 20 { Low } else { High }).collect();
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn separable_data_scores_perfectly() {
        for kind in ModelKind::ALL {
            let r = evaluate_repeated(&separable(), kind, &Hyper::default(), 0.8, 10, 3).unwrap();
            assert_eq!(r.accuracy.mean, 1.0, "{kind}");
            assert_eq!((r.accuracy.ci_lo, r.accuracy.ci_hi), (1.0, 1.0));
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let a = evaluate_repeated(&separable(), ModelKind::Knn, &Hyper::default(), 0.8, 20, 9).unwrap();
        let b = evaluate_repeated(&separable(), ModelKind::Knn, &Hyper::default(), 0.8, 20, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_reps() {
        assert!(evaluate_repeated(&separable(), ModelKind::Dt, &Hyper::default(), 0.8, 1, 0).is_err());
    }

    #[test]
    fn split_sizes() {
        let (tr, te) = train_test_split(100, 0.8, 1, 0).unwrap();
        assert_eq!((tr.len(), te.len()), (80, 20));
        let mut all: Vec<_> = tr.iter().chain(&te).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn perfect_scorer_reaches_corner() {
        let d = separable();
        let m = train(ModelKind::Lda, &d, &Hyper::default()).unwrap();
        let pr = precision_recall_curve(&m, &d).unwrap();
        assert!(pr.iter().any(|p| p.recall == 1.0 && p.precision == 1.0));
        assert!(pr.windows(2).all(|w| w[0].threshold > w[1].threshold && w[0].recall <= w[1].recall));
    }

    #[test]
    fn single_class_curve_is_error() {
        let d = separable();
        let m = train(ModelKind::Nb, &d, &Hyper::default()).unwrap();
        let only_high = d.subset(&(20..40).collect::<Vec<_>>());
        assert!(matches!(precision_recall_curve(&m, &only_high), Err(Error::Degenerate(_))));
    }
}
