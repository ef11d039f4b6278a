//! Binary classification tree grown greedily on entropy (information gain).

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::alignment::ImportanceVector;
use crate::data::Dataset;
use crate::error::{AuditError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Kept for provenance; induction is deterministic and never draws from it.
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 5,
            min_samples_split: 15,
            min_samples_leaf: 10,
            seed: 42,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 || self.min_samples_leaf < 1 || self.min_samples_split < 2 {
            return Err(AuditError::Config(format!(
                "tree config needs max_depth >= 1, min_samples_leaf >= 1, min_samples_split >= 2: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n_node: usize,
        /// Entropy of the node, in bits.
        impurity: f64,
        /// Parent entropy minus size-weighted child entropies.
        gain: f64,
    },
    Leaf {
        /// `[label 0, label 1]`
        counts: [usize; 2],
        proba: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    /// Arena; node 0 is the root.
    pub nodes: Vec<TreeNode>,
    pub feature_names: Vec<String>,
    pub n_train: usize,
}

/// Shannon entropy in bits of a two-class count pair, with `0 log 0 = 0`.
pub fn entropy(counts: [usize; 2]) -> Result<f64> {
    let n = counts[0] + counts[1];
    if n == 0 {
        return Err(AuditError::InvalidInput("entropy of an empty node".into()));
    }
    Ok(entropy_unchecked(counts[0], counts[1]))
}

fn entropy_unchecked(c0: usize, c1: usize) -> f64 {
    let n = (c0 + c1) as f64;
    [c0, c1]
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [u8],
    cfg: &'a TreeConfig,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn counts(&self, rows: &[usize]) -> [usize; 2] {
        let ones = rows.iter().filter(|&&i| self.y[i] == 1).count();
        [rows.len() - ones, ones]
    }

    fn leaf(&mut self, counts: [usize; 2]) -> usize {
        let n = counts[0] + counts[1];
        self.nodes.push(TreeNode::Leaf {
            counts,
            proba: counts[1] as f64 / n as f64,
        });
        self.nodes.len() - 1
    }

    /// Features in index order, thresholds ascending; only a strictly larger
    /// gain replaces the incumbent.
    fn best_split(&self, rows: &[usize], parent: f64, counts: [usize; 2]) -> Option<Split> {
        let n = rows.len();
        let min_leaf = self.cfg.min_samples_leaf;
        let mut best: Option<Split> = None;
        let mut sorted = rows.to_vec();
        for feature in 0..self.x.ncols() {
            let col = self.x.column(feature);
            sorted.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            let mut left = [0usize; 2];
            for i in 1..n {
                left[self.y[sorted[i - 1]] as usize] += 1;
                let (lo, hi) = (col[sorted[i - 1]], col[sorted[i]]);
                if lo == hi || i < min_leaf || n - i < min_leaf {
                    continue;
                }
                let right = [counts[0] - left[0], counts[1] - left[1]];
                let wl = i as f64 / n as f64;
                let gain = parent
                    - wl * entropy_unchecked(left[0], left[1])
                    - (1.0 - wl) * entropy_unchecked(right[0], right[1]);
                // rounding can push a zero gain slightly negative
                let gain = gain.max(0.0);
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(Split {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let counts = self.counts(rows);
        let n = rows.len();
        if depth >= self.cfg.max_depth
            || n < self.cfg.min_samples_split
            || counts[0] == 0
            || counts[1] == 0
        {
            return self.leaf(counts);
        }
        let impurity = entropy_unchecked(counts[0], counts[1]);
        let Some(split) = self.best_split(rows, impurity, counts) else {
            return self.leaf(counts);
        };
        let col = self.x.column(split.feature);
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| col[i] <= split.threshold);
        debug_assert!(split.gain >= 0.0);

        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            counts,
            proba: 0.0,
        });
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.nodes[id] = TreeNode::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            n_node: n,
            impurity,
            gain: split.gain,
        };
        id
    }
}

pub fn fit_tree(train: &Dataset, cfg: &TreeConfig) -> Result<TreeModel> {
    cfg.validate()?;
    let mut b = Builder {
        x: train.x.view(),
        y: &train.y,
        cfg,
        nodes: Vec::new(),
    };
    let rows: Vec<usize> = (0..train.n_rows()).collect();
    b.grow(&rows, 0);
    Ok(TreeModel {
        nodes: b.nodes,
        feature_names: train.feature_names.clone(),
        n_train: train.n_rows(),
    })
}

impl TreeModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn leaf_proba(&self, row: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => id = if row[*feature] <= *threshold { *left } else { *right },
                TreeNode::Leaf { proba, .. } => return *proba,
            }
        }
    }

    /// Leaf probability of class 1 for each row.
    pub fn predict_proba(&self, rows: ArrayView2<f64>) -> Result<Vec<f64>> {
        if rows.ncols() != self.n_features() {
            return Err(AuditError::Dimension {
                expected: self.n_features(),
                found: rows.ncols(),
            });
        }
        Ok(rows
            .rows()
            .into_iter()
            .map(|r| match r.as_slice() {
                Some(s) => self.leaf_proba(s),
                None => self.leaf_proba(&r.to_vec()),
            })
            .collect())
    }

    /// Labels (1 iff leaf probability >= 0.5) and probabilities.
    pub fn predict(&self, rows: ArrayView2<f64>) -> Result<(Vec<u8>, Vec<f64>)> {
        let proba = self.predict_proba(rows)?;
        Ok((proba.iter().map(|&p| u8::from(p >= 0.5)).collect(), proba))
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], id: usize) -> usize {
            match &nodes[id] {
                TreeNode::Internal { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }
}

/// Sum over internal nodes of `(n_node / n_train) * gain`, grouped by split
/// feature and normalized to sum 1. All zeros for a single-leaf tree.
pub fn tree_importances(model: &TreeModel) -> ImportanceVector {
    let mut values = vec![0.0; model.n_features()];
    for node in &model.nodes {
        if let TreeNode::Internal {
            feature,
            n_node,
            gain,
            ..
        } = node
        {
            values[*feature] += *n_node as f64 / model.n_train as f64 * gain;
        }
    }
    let total: f64 = values.iter().sum();
    if total > 0.0 {
        values.iter_mut().for_each(|v| *v /= total);
    }
    ImportanceVector {
        feature_names: model.feature_names.clone(),
        values,
        no_signal: total == 0.0,
    }
}

pub fn accuracy(pred: &[u8], truth: &[u8]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}
