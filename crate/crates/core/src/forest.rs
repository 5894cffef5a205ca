//! Random forest: bootstrap-aggregated unpruned CART trees with per-node
//! feature subsampling and a cutoff on the non-fraud vote fraction.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cart::{grow_tree, Tree, TreeNode};
use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};
use crate::par::*;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RFParams {
    pub n_trees: usize,
    pub mtry: usize,
    pub min_node_size: usize,
    /// A sample is non-fraud iff its non-fraud vote fraction exceeds this.
    pub cutoff: f64,
    pub seed: u64,
}

impl Default for RFParams {
    fn default() -> Self {
        Self {
            n_trees: 500,
            mtry: 3,
            min_node_size: 1,
            cutoff: 0.5,
            seed: 0,
        }
    }
}

impl RFParams {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::input("n_trees must be positive"));
        }
        if self.mtry == 0 || self.mtry > n_features {
            return Err(Error::input(format!(
                "mtry must lie in 1..={n_features}, got {}",
                self.mtry
            )));
        }
        if self.min_node_size == 0 {
            return Err(Error::input("min_node_size must be positive"));
        }
        validate_cutoff(self.cutoff)
    }
}

pub(crate) fn validate_cutoff(cutoff: f64) -> Result<()> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::input(format!(
            "cutoff must lie in (0, 1), got {cutoff}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: RFParams,
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
}

/// Tree `i` is grown on a bootstrap of `train` drawn from stream `i` of
/// `seed`, so serial and parallel training give identical forests.
pub fn train_forest(train: &Dataset, p: &RFParams) -> Result<ForestModel> {
    train.require_both_classes()?;
    p.validate(train.n_features())?;
    let n = train.len();
    let trees = (0..p.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(p.seed, i as u64);
            let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            grow_tree(train, sample, p.mtry, p.min_node_size, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        params: p.clone(),
        feature_names: train.feature_names().to_vec(),
        trees,
    })
}

/// Fraction of trees whose leaf majority is non-fraud. A tied leaf votes
/// fraud.
pub fn forest_proba(m: &ForestModel, x: &[f64]) -> f64 {
    let votes = m
        .trees
        .iter()
        .filter(|t| {
            let (f, n) = t.leaf_counts(x);
            n > f
        })
        .count();
    votes as f64 / m.trees.len() as f64
}

/// Non-fraud iff `p_nonfraud > cutoff`; equality classifies as fraud.
pub fn classify(p_nonfraud: f64, cutoff: f64) -> Label {
    if p_nonfraud > cutoff {
        Label::NonFraud
    } else {
        Label::Fraud
    }
}

/// Raw and sum-normalized feature importances.
#[derive(Debug, Clone, PartialEq)]
pub struct Importance {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl Importance {
    pub(crate) fn from_raw(raw: Vec<f64>) -> Self {
        let total: f64 = raw.iter().sum();
        let normalized = if total > 0.0 {
            raw.iter().map(|v| v / total).collect()
        } else {
            vec![0.0; raw.len()]
        };
        Self { raw, normalized }
    }
}

/// Mean decrease in gini impurity: per tree, each split adds
/// `(node_rows / root_rows) * decrease` to its feature; trees are averaged.
pub fn gini_importance(m: &ForestModel) -> Importance {
    let mut raw = vec![0.0; m.feature_names.len()];
    for tree in &m.trees {
        let root = tree.root_rows() as f64;
        for node in &tree.nodes {
            if let TreeNode::Internal {
                feature,
                n_rows,
                impurity_decrease,
                ..
            } = *node
            {
                raw[feature] += (n_rows as f64 / root) * impurity_decrease.max(0.0);
            }
        }
    }
    let n_trees = m.trees.len() as f64;
    raw.iter_mut().for_each(|v| *v /= n_trees);
    Importance::from_raw(raw)
}

impl ForestModel {
    pub fn predict_proba(&self, d: &Dataset) -> Vec<f64> {
        (0..d.len())
            .into_par_iter()
            .map(|i| forest_proba(self, d.row(i)))
            .collect()
    }
}
