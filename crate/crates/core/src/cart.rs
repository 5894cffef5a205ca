//! Unpruned binary classification trees grown by gini impurity reduction.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Gini impurity `sum_i p(i) (1 - p(i))` of a two-class node.
pub fn gini(n_fraud: usize, n_nonfraud: usize) -> Result<f64> {
    if n_fraud + n_nonfraud == 0 {
        return Err(Error::input("gini of an empty node"));
    }
    Ok(gini_unchecked(n_fraud, n_nonfraud))
}

#[inline]
fn gini_unchecked(n_fraud: usize, n_nonfraud: usize) -> f64 {
    let n = (n_fraud + n_nonfraud) as f64;
    let p = n_fraud as f64 / n;
    let q = n_nonfraud as f64 / n;
    p * (1.0 - p) + q * (1.0 - q)
}

/// Weighted impurity decrease of splitting `parent` into `left` and the
/// remainder. Counts are `(n_fraud, n_nonfraud)`.
#[inline]
fn impurity_decrease(parent: (usize, usize), left: (usize, usize)) -> f64 {
    let right = (parent.0 - left.0, parent.1 - left.1);
    let n = (parent.0 + parent.1) as f64;
    let n_left = (left.0 + left.1) as f64;
    let n_right = (right.0 + right.1) as f64;
    gini_unchecked(parent.0, parent.1)
        - (n_left / n) * gini_unchecked(left.0, left.1)
        - (n_right / n) * gini_unchecked(right.0, right.1)
}

/// Exact ordering key for a split: the weighted child impurity is
/// `2 * (lf*ln/nl + rf*rn/nr) / n`, so candidates of one node compare by
/// `lf*ln*nr + rf*rn*nl` over `nl*nr`. Smaller is better.
#[inline]
fn child_key(parent: (usize, usize), left: (usize, usize)) -> (u128, u128) {
    let right = (parent.0 - left.0, parent.1 - left.1);
    let (lf, ln) = (left.0 as u128, left.1 as u128);
    let (rf, rn) = (right.0 as u128, right.1 as u128);
    let (nl, nr) = (lf + ln, rf + rn);
    (lf * ln * nr + rf * rn * nl, nl * nr)
}

/// Threshold between two consecutive distinct values such that `a` goes
/// left and `b` goes right under the `<=` rule.
#[inline]
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub decrease: f64,
}

/// Scratch space reused across the nodes of one tree.
#[derive(Default)]
pub struct SplitBuffer {
    pairs: Vec<(f64, bool)>,
}

/// Exhaustive search over every candidate feature and every midpoint
/// between consecutive distinct values.
///
/// Returns `None` when the node holds `<= min_node_size` rows, is pure, or
/// every candidate feature is constant. Ties go to the lower feature index,
/// then to the lower threshold.
pub fn best_split(
    d: &Dataset,
    rows: &[usize],
    candidate_features: &[usize],
    min_node_size: usize,
) -> Option<Split> {
    best_split_with(
        &mut SplitBuffer::default(),
        d,
        rows,
        candidate_features,
        min_node_size,
    )
}

pub fn best_split_with(
    buf: &mut SplitBuffer,
    d: &Dataset,
    rows: &[usize],
    candidate_features: &[usize],
    min_node_size: usize,
) -> Option<Split> {
    if rows.len() < 2 || rows.len() <= min_node_size {
        return None;
    }
    let labels = d.labels();
    let n_fraud = rows.iter().filter(|&&r| labels[r].is_fraud()).count();
    let parent = (n_fraud, rows.len() - n_fraud);
    if parent.0 == 0 || parent.1 == 0 {
        return None;
    }
    let mut features = candidate_features.to_vec();
    features.sort_unstable();
    features.dedup();

    let mut best: Option<Split> = None;
    let mut best_key = (0u128, 1u128);
    for &feature in &features {
        buf.pairs.clear();
        buf.pairs.extend(
            rows.iter()
                .map(|&r| (d.value(r, feature), labels[r].is_fraud())),
        );
        buf.pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = (0usize, 0usize);
        for w in 0..buf.pairs.len() - 1 {
            let (value, fraud) = buf.pairs[w];
            if fraud {
                left.0 += 1;
            } else {
                left.1 += 1;
            }
            let next = buf.pairs[w + 1].0;
            if next <= value {
                continue;
            }
            let key = child_key(parent, left);
            if best.is_none() || key.0 * best_key.1 < best_key.0 * key.1 {
                best_key = key;
                best = Some(Split {
                    feature,
                    threshold: midpoint(value, next),
                    decrease: impurity_decrease(parent, left),
                });
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go to `left`.
    Internal {
        feature: usize,
        threshold: f64,
        n_rows: usize,
        impurity_decrease: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        n_fraud: usize,
        n_nonfraud: usize,
    },
}

/// Node arena; `nodes[0]` is the root and children are referenced by
/// index. A flat list keeps model files clear of JSON nesting limits on
/// deep unpruned trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf_counts(&self, x: &[f64]) -> (usize, usize) {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[feature] <= threshold { left } else { right },
                TreeNode::Leaf {
                    n_fraud,
                    n_nonfraud,
                } => return (n_fraud, n_nonfraud),
            }
        }
    }

    pub fn root_rows(&self) -> usize {
        match self.nodes[0] {
            TreeNode::Internal { n_rows, .. } => n_rows,
            TreeNode::Leaf {
                n_fraud,
                n_nonfraud,
            } => n_fraud + n_nonfraud,
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Internal { left, right, .. } => 1 + go(t, left).max(go(t, right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }
}

/// Grows an unpruned tree on `rows` (duplicates allowed, as in a bootstrap
/// sample). At each splittable node `mtry` features are drawn without
/// replacement from `rng`.
pub fn grow_tree(
    d: &Dataset,
    rows: Vec<usize>,
    mtry: usize,
    min_node_size: usize,
    rng: &mut Rng,
) -> Result<Tree> {
    if rows.is_empty() {
        return Err(Error::input("cannot grow a tree on zero rows"));
    }
    let n_features = d.n_features();
    if mtry == 0 || mtry > n_features {
        return Err(Error::input(format!(
            "mtry must lie in 1..={n_features}, got {mtry}"
        )));
    }
    let labels = d.labels();
    let mut buf = SplitBuffer::default();
    let mut nodes = vec![TreeNode::Leaf {
        n_fraud: 0,
        n_nonfraud: 0,
    }];
    let mut stack = vec![(0usize, rows)];
    while let Some((slot, rows)) = stack.pop() {
        let n_fraud = rows.iter().filter(|&&r| labels[r].is_fraud()).count();
        let n_nonfraud = rows.len() - n_fraud;
        let splittable = n_fraud > 0 && n_nonfraud > 0 && rows.len() > min_node_size;
        let split = if splittable {
            let candidates = index::sample(rng, n_features, mtry).into_vec();
            best_split_with(&mut buf, d, &rows, &candidates, min_node_size)
        } else {
            None
        };
        match split {
            None => {
                nodes[slot] = TreeNode::Leaf {
                    n_fraud,
                    n_nonfraud,
                }
            }
            Some(s) => {
                let n_rows = rows.len();
                let (l, r): (Vec<usize>, Vec<usize>) = rows
                    .into_iter()
                    .partition(|&i| d.value(i, s.feature) <= s.threshold);
                let left = nodes.len();
                let right = left + 1;
                let placeholder = TreeNode::Leaf {
                    n_fraud: 0,
                    n_nonfraud: 0,
                };
                nodes.push(placeholder.clone());
                nodes.push(placeholder);
                nodes[slot] = TreeNode::Internal {
                    feature: s.feature,
                    threshold: s.threshold,
                    n_rows,
                    impurity_decrease: s.decrease,
                    left,
                    right,
                };
                stack.push((right, r));
                stack.push((left, l));
            }
        }
    }
    Ok(Tree { nodes })
}

/// Leaf class proportions `(p_fraud, p_nonfraud)` for `x`.
pub fn predict_tree(tree: &Tree, x: &[f64]) -> (f64, f64) {
    let (f, n) = tree.leaf_counts(x);
    let total = (f + n) as f64;
    (f as f64 / total, n as f64 / total)
}
