//! CART-style decision tree.
//!
//! A split `(feature, threshold)` sends rows with `x[feature] <= threshold`
//! to the `le` branch and the rest to `gt`. The split chosen at each node
//! minimises the size-weighted child impurity over all midpoints between
//! consecutive distinct feature values; ties go to the lowest feature index,
//! then the smallest threshold.

use serde::{Deserialize, Serialize};

use super::{require_nonempty, Dataset};
use crate::error::{Error, Result};
use crate::features::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Impurity {
    /// `sum p (1 - p)`.
    #[default]
    Gini,
    /// `-sum p log2 p`.
    Entropy,
}

impl std::str::FromStr for Impurity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gini" => Ok(Impurity::Gini),
            "entropy" => Ok(Impurity::Entropy),
            other => Err(Error::Format(format!("unknown impurity {other:?}"))),
        }
    }
}

impl Impurity {
    /// Impurity of a node holding `high` positives among `n` rows.
    pub fn of(self, high: usize, n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let p = high as f64 / n as f64;
        let q = 1.0 - p;
        match self {
            Impurity::Gini => p * (1.0 - p) + q * (1.0 - q),
            Impurity::Entropy => {
                let term = |v: f64| if v > 0.0 { -v * v.log2() } else { 0.0 };
                term(p) + term(q)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        label: Label,
        /// Share of training rows in this leaf labelled high.
        high_fraction: f64,
        n: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        le: usize,
        gt: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    n_features: usize,
    impurity: Impurity,
    /// Root is node 0.
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
struct BestSplit {
    feature: usize,
    threshold: f64,
    weighted: f64,
}

impl DecisionTree {
    pub fn fit(data: &Dataset, max_depth: usize, min_leaf: usize, impurity: Impurity) -> Result<Self> {
        require_nonempty(data)?;
        let mut tree = Self {
            n_features: data.n_features(),
            impurity,
            nodes: Vec::new(),
        };
        let idx: Vec<usize> = (0..data.len()).collect();
        tree.grow(data, idx, 0, max_depth, min_leaf.max(1));
        Ok(tree)
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn impurity(&self) -> Impurity {
        self.impurity
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { le, gt, .. } => 1 + walk(nodes, le).max(walk(nodes, gt)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn grow(&mut self, data: &Dataset, idx: Vec<usize>, depth: usize, max_depth: usize, min_leaf: usize) -> usize {
        let n = idx.len();
        let high = idx.iter().filter(|&&i| data.y[i] == Label::High).count();
        let at = self.nodes.len();
        self.nodes.push(leaf(high, n));

        if high == 0 || high == n || depth >= max_depth || n < 2 * min_leaf {
            return at;
        }
        let parent = self.impurity.of(high, n);
        let Some(best) = best_split(data, &idx, self.impurity, min_leaf) else {
            return at;
        };
        if best.weighted >= parent {
            return at;
        }
        let (le_idx, gt_idx): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| data.x[i][best.feature] <= best.threshold);
        let le = self.grow(data, le_idx, depth + 1, max_depth, min_leaf);
        let gt = self.grow(data, gt_idx, depth + 1, max_depth, min_leaf);
        self.nodes[at] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            le,
            gt,
        };
        at
    }

    fn leaf_for(&self, x: &[f64]) -> &Node {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, le, gt } => {
                    i = if x[*feature] <= *threshold { *le } else { *gt };
                }
                leaf => return leaf,
            }
        }
    }

    pub(crate) fn predict_row(&self, x: &[f64]) -> Label {
        match self.leaf_for(x) {
            Node::Leaf { label, .. } => *label,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub(crate) fn score_row(&self, x: &[f64]) -> f64 {
        match self.leaf_for(x) {
            Node::Leaf { high_fraction, .. } => *high_fraction,
            Node::Split { .. } => unreachable!(),
        }
    }
}

fn leaf(high: usize, n: usize) -> Node {
    // Even split goes to the low-risk class.
    let label = if 2 * high > n { Label::High } else { Label::Low };
    Node::Leaf {
        label,
        high_fraction: if n == 0 { 0.0 } else { high as f64 / n as f64 },
        n,
    }
}

/// Midpoint of two distinct adjacent values that still separates them.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi {
        lo
    } else {
        m
    }
}

fn best_split(data: &Dataset, idx: &[usize], impurity: Impurity, min_leaf: usize) -> Option<BestSplit> {
    let n = idx.len();
    let total_high = idx.iter().filter(|&&i| data.y[i] == Label::High).count();
    let mut best: Option<BestSplit> = None;
    let mut order = idx.to_vec();

    for feature in 0..data.n_features() {
        order.sort_by(|&a, &b| data.x[a][feature].total_cmp(&data.x[b][feature]));
        let mut le_high = 0;
        for pos in 0..n - 1 {
            if data.y[order[pos]] == Label::High {
                le_high += 1;
            }
            let lo = data.x[order[pos]][feature];
            let hi = data.x[order[pos + 1]][feature];
            if lo == hi {
                continue;
            }
            let n_le = pos + 1;
            let n_gt = n - n_le;
            if n_le < min_leaf || n_gt < min_leaf {
                continue;
            }
            let weighted = (n_le as f64 / n as f64) * impurity.of(le_high, n_le)
                + (n_gt as f64 / n as f64) * impurity.of(total_high - le_high, n_gt);
            if best.is_none_or(|b| weighted < b.weighted) {
                best = Some(BestSplit {
                    feature,
                    threshold: midpoint(lo, hi),
                    weighted,
                });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Label::{High, Low};

    #[test]
    fn impurity_extremes() {
        assert_eq!(Impurity::Gini.of(4, 4), 0.0);
        assert_eq!(Impurity::Entropy.of(0, 4), 0.0);
        assert_eq!(Impurity::Gini.of(2, 4), 0.5);
        assert_eq!(Impurity::Entropy.of(2, 4), 1.0);
    }

    #[test]
    fn pure_node_is_leaf() {
        let d = Dataset::new(vec![vec![1.0], vec![2.0], vec![3.0]], vec![High; 3]).unwrap();
        let t = DecisionTree::fit(&d, 12, 1, Impurity::Gini).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert!(matches!(t.nodes()[0], Node::Leaf { label: High, .. }));
    }

    #[test]
    fn one_dimensional_toy_split() {
        let d = Dataset::new(
            vec![vec![-90.0], vec![-85.0], vec![-60.0], vec![-55.0]],
            vec![Low, Low, High, High],
        )
        .unwrap();
        for imp in [Impurity::Gini, Impurity::Entropy] {
            let t = DecisionTree::fit(&d, 12, 1, imp).unwrap();
            match t.nodes()[0] {
                Node::Split { feature, threshold, .. } => {
                    assert_eq!(feature, 0);
                    assert!(threshold > -85.0 && threshold <= -60.0, "{threshold}");
                }
                _ => panic!("root should split"),
            }
            let pred: Vec<_> = d.x.iter().map(|r| t.predict_row(r)).collect();
            assert_eq!(pred, d.y);
        }
    }

    #[test]
    fn single_class_gives_constant_predictor() {
        let d = Dataset::new(vec![vec![1.0, 5.0], vec![2.0, 4.0]], vec![Low, Low]).unwrap();
        let t = DecisionTree::fit(&d, 12, 1, Impurity::Gini).unwrap();
        assert_eq!(t.predict_row(&[100.0, -3.0]), Low);
    }

    #[test]
    fn empty_training_set_fails() {
        assert!(DecisionTree::fit(&Dataset::default(), 12, 5, Impurity::Gini).is_err());
    }

    #[test]
    fn depth_and_leaf_limits() {
        let x: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64]).collect();
        let y: Vec<Label> = (0..64).map(|i| if (i / 4) % 2 == 0 { Low } else { High }).collect();
        let d = Dataset::new(x, y).unwrap();
        let t = DecisionTree::fit(&d, 2, 1, Impurity::Gini).unwrap();
        assert!(t.depth() <= 2);
        let t = DecisionTree::fit(&d, 12, 8, Impurity::Gini).unwrap();
        for node in t.nodes() {
            if let Node::Leaf { n, .. } = node {
                assert!(*n >= 8);
            }
        }
    }

    #[test]
    fn midpoint_of_adjacent_floats() {
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let m = midpoint(lo, hi);
        assert!(lo <= m && m < hi);
    }
}
