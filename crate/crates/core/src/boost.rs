//! Gradient-boosted regression trees with the regularized second-order
//! logistic objective: exact greedy split search, column subsampling per
//! tree, minimum child Hessian, shrinkage and early stopping on an
//! internal holdout.
//!
//! Labels are encoded fraud = 1, non-fraud = 0, so the model margin is the
//! fraud log-odds.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::cart::midpoint;
use crate::dataset::{stratified_split_indices, Dataset};
use crate::error::{Error, Result};
use crate::forest::{validate_cutoff, Importance};
use crate::par::*;
use crate::rng::{self, streams};

pub const LABEL_ENCODING: &str = "fraud=1,nonfraud=0";
const HESSIAN_FLOOR: f64 = 1e-16;
const EARLY_STOP_HOLDOUT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XGBParams {
    pub max_depth: usize,
    /// Fraction of features sampled (without replacement) for each tree.
    pub colsample: f64,
    pub min_child_weight: f64,
    /// Learning rate applied to every leaf weight.
    pub eta: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Penalty per additional leaf.
    pub gamma_pen: f64,
    pub n_rounds: usize,
    /// `None` trains all `n_rounds` on the full training set.
    pub early_stop_rounds: Option<usize>,
    pub cutoff: f64,
    pub seed: u64,
}

impl Default for XGBParams {
    fn default() -> Self {
        Self {
            max_depth: 6,
            colsample: 1.0,
            min_child_weight: 1.0,
            eta: 0.1,
            lambda: 1.0,
            gamma_pen: 0.0,
            n_rounds: 2000,
            early_stop_rounds: Some(100),
            cutoff: 0.5,
            seed: 0,
        }
    }
}

impl XGBParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::input("max_depth must be at least 1"));
        }
        if !(self.colsample > 0.0 && self.colsample <= 1.0) {
            return Err(Error::input(format!(
                "colsample must lie in (0, 1], got {}",
                self.colsample
            )));
        }
        if [self.min_child_weight, self.lambda, self.gamma_pen]
            .iter()
            .any(|v| v.is_nan() || *v < 0.0)
        {
            return Err(Error::input(
                "min_child_weight, lambda and gamma_pen must be non-negative",
            ));
        }
        if self.eta.is_nan() || self.eta < 0.0 {
            return Err(Error::input("eta must be non-negative"));
        }
        if self.early_stop_rounds == Some(0) {
            return Err(Error::input("early_stop_rounds must be positive"));
        }
        validate_cutoff(self.cutoff)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary log-loss of label `y` in {0, 1} at `margin` (log-odds of y = 1).
#[inline]
pub fn log_loss(y: f64, margin: f64) -> f64 {
    let softplus = if margin > 0.0 {
        margin + (-margin).exp().ln_1p()
    } else {
        margin.exp().ln_1p()
    };
    softplus - y * margin
}

/// First and second derivative of [`log_loss`] with respect to the margin.
#[inline]
pub fn logistic_grad_hess(y: f64, margin: f64) -> (f64, f64) {
    let p = sigmoid(margin);
    // 1 - p computed directly, so large margins keep their precision
    let q = sigmoid(-margin);
    let g = if y == 1.0 { -q } else { p - y };
    (g, (p * q).max(HESSIAN_FLOOR))
}

/// Loss reduction of replacing one leaf by two:
/// `0.5 * [GL²/(HL+λ) + GR²/(HR+λ) - (GL+GR)²/(HL+HR+λ)] - γ`.
#[inline]
pub fn split_gain(g_l: f64, h_l: f64, g_r: f64, h_r: f64, lambda: f64, gamma_pen: f64) -> f64 {
    let g = g_l + g_r;
    0.5 * (g_l * g_l / (h_l + lambda) + g_r * g_r / (h_r + lambda) - g * g / (h_l + h_r + lambda))
        - gamma_pen
}

/// Minimizer of `G w + (H + λ) w² / 2`.
#[inline]
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegNode {
    /// Rows with `x[feature] <= threshold` go to `left`. `cover` is the
    /// node's Hessian sum.
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        cover: f64,
        left: usize,
        right: usize,
    },
    /// `weight` already includes the learning rate.
    Leaf { weight: f64, cover: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegTree {
    pub nodes: Vec<RegNode>,
}

impl RegTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                RegNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[feature] <= threshold { left } else { right },
                RegNode::Leaf { weight, .. } => return weight,
            }
        }
    }

    pub fn cover(&self, node: usize) -> f64 {
        match self.nodes[node] {
            RegNode::Split { cover, .. } | RegNode::Leaf { cover, .. } => cover,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub params: XGBParams,
    pub feature_names: Vec<String>,
    pub label_encoding: String,
    pub base_score: f64,
    /// Number of leading trees used for prediction.
    pub best_round: usize,
    pub trees: Vec<RegTree>,
}

impl BoostModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score
            + self.trees[..self.best_round]
                .iter()
                .map(|t| t.predict(x))
                .sum::<f64>()
    }

    pub fn predict_proba(&self, d: &Dataset) -> Vec<f64> {
        (0..d.len())
            .into_par_iter()
            .map(|i| boost_proba(self, d.row(i)))
            .collect()
    }
}

/// Non-fraud probability `1 - sigmoid(margin)`.
pub fn boost_proba(m: &BoostModel, x: &[f64]) -> f64 {
    1.0 - sigmoid(m.margin(x))
}

/// Per-round mean log-loss on the fitting rows and, when early stopping is
/// enabled, on the internal holdout. Index 0 is the base score alone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoostTrace {
    pub train_loss: Vec<f64>,
    pub holdout_loss: Vec<f64>,
}

pub fn train_boost(train: &Dataset, p: &XGBParams) -> Result<BoostModel> {
    train_boost_traced(train, p).map(|(m, _)| m)
}

pub fn train_boost_traced(train: &Dataset, p: &XGBParams) -> Result<(BoostModel, BoostTrace)> {
    train.require_both_classes()?;
    p.validate()?;
    let (fit_rows, hold_rows) = match p.early_stop_rounds {
        Some(_) => stratified_split_indices(
            train,
            1.0 - EARLY_STOP_HOLDOUT,
            p.seed,
            streams::BOOST_HOLDOUT,
        )?,
        None => ((0..train.len()).collect(), Vec::new()),
    };
    let early_stop = p.early_stop_rounds.filter(|_| !hold_rows.is_empty());
    let target = |r: usize| if train.label(r).is_fraud() { 1.0 } else { 0.0 };
    let y: Vec<f64> = fit_rows.iter().map(|&r| target(r)).collect();
    let y_hold: Vec<f64> = hold_rows.iter().map(|&r| target(r)).collect();
    let rate = y.iter().sum::<f64>() / y.len() as f64;
    if rate <= 0.0 || rate >= 1.0 {
        return Err(Error::Training(
            "fitting rows after the early-stopping holdout contain a single class".into(),
        ));
    }
    let base_score = (rate / (1.0 - rate)).ln();

    let n_features = train.n_features();
    let columns = ColumnIndex::new(train, &fit_rows);
    let k_cols = ((p.colsample * n_features as f64).ceil() as usize).clamp(1, n_features);
    let mean_loss = |ys: &[f64], ms: &[f64]| {
        if ys.is_empty() {
            f64::NAN
        } else {
            ys.iter()
                .zip(ms)
                .map(|(&y, &m)| log_loss(y, m))
                .sum::<f64>()
                / ys.len() as f64
        }
    };

    let mut margins = vec![base_score; fit_rows.len()];
    let mut hold_margins = vec![base_score; hold_rows.len()];
    let mut grad = vec![0.0; fit_rows.len()];
    let mut hess = vec![0.0; fit_rows.len()];
    let mut trace = BoostTrace {
        train_loss: vec![mean_loss(&y, &margins)],
        holdout_loss: Vec::new(),
    };
    let mut best_loss = mean_loss(&y_hold, &hold_margins);
    if early_stop.is_some() {
        trace.holdout_loss.push(best_loss);
    }
    let mut best_round = 0;
    let mut trees = Vec::new();

    for round in 0..p.n_rounds {
        for i in 0..fit_rows.len() {
            let (g, h) = logistic_grad_hess(y[i], margins[i]);
            grad[i] = g;
            hess[i] = h;
        }
        let cols: Vec<usize> = if k_cols == n_features {
            (0..n_features).collect()
        } else {
            let mut rng = rng::stream(p.seed, streams::BOOST_COLUMNS + round as u64);
            let mut c = index::sample(&mut rng, n_features, k_cols).into_vec();
            c.sort_unstable();
            c
        };
        let (tree, leaf_of) = grow_regression_tree(&columns, &grad, &hess, &cols, p);
        for (m, &leaf) in margins.iter_mut().zip(&leaf_of) {
            if let RegNode::Leaf { weight, .. } = tree.nodes[leaf as usize] {
                *m += weight;
            }
        }
        trace.train_loss.push(mean_loss(&y, &margins));
        for (m, &r) in hold_margins.iter_mut().zip(&hold_rows) {
            *m += tree.predict(train.row(r));
        }
        trees.push(tree);

        if let Some(patience) = early_stop {
            let loss = mean_loss(&y_hold, &hold_margins);
            trace.holdout_loss.push(loss);
            if loss < best_loss {
                best_loss = loss;
                best_round = round + 1;
            } else if round + 1 - best_round >= patience {
                break;
            }
        } else {
            best_round = round + 1;
        }
    }
    trees.truncate(best_round);
    Ok((
        BoostModel {
            params: p.clone(),
            feature_names: train.feature_names().to_vec(),
            label_encoding: LABEL_ENCODING.to_string(),
            base_score,
            best_round,
            trees,
        },
        trace,
    ))
}

/// Column-major copy of the fitting rows plus, per feature, the row
/// positions in ascending value order.
struct ColumnIndex {
    values: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
}

impl ColumnIndex {
    fn new(d: &Dataset, rows: &[usize]) -> Self {
        let values: Vec<Vec<f64>> = (0..d.n_features())
            .map(|f| rows.iter().map(|&r| d.value(r, f)).collect())
            .collect();
        let order = values
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                idx
            })
            .collect();
        Self { values, order }
    }

    fn n_rows(&self) -> usize {
        self.values[0].len()
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    threshold: f64,
    g_left: f64,
    h_left: f64,
}

const NOT_ACTIVE: usize = usize::MAX;

/// Level-wise exact greedy growth. Returns the tree and the leaf reached by
/// every fitting row.
fn grow_regression_tree(
    cols: &ColumnIndex,
    grad: &[f64],
    hess: &[f64],
    features: &[usize],
    p: &XGBParams,
) -> (RegTree, Vec<u32>) {
    let n = cols.n_rows();
    let mut sums: Vec<(f64, f64)> = vec![(grad.iter().sum(), hess.iter().sum())];
    let mut nodes = vec![RegNode::Leaf {
        weight: 0.0,
        cover: sums[0].1,
    }];
    let mut node_of = vec![0u32; n];
    let mut frontier = vec![0usize];

    for _depth in 0..p.max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut slot = vec![NOT_ACTIVE; nodes.len()];
        for (s, &node) in frontier.iter().enumerate() {
            slot[node] = s;
        }
        let per_feature: Vec<Vec<Option<Candidate>>> = features
            .par_iter()
            .map(|&f| scan_feature(cols, f, grad, hess, &node_of, &slot, &frontier, &sums, p))
            .collect();

        let mut next = Vec::new();
        let mut split_of = vec![None; frontier.len()];
        for (s, &node) in frontier.iter().enumerate() {
            let mut best: Option<(usize, Candidate)> = None;
            for (fi, cands) in per_feature.iter().enumerate() {
                if let Some(c) = cands[s] {
                    if best.is_none_or(|(_, b)| c.gain > b.gain) {
                        best = Some((features[fi], c));
                    }
                }
            }
            let Some((feature, c)) = best else { continue };
            if c.gain <= 0.0 {
                continue;
            }
            let (g, h) = sums[node];
            let left = nodes.len();
            let right = left + 1;
            sums.push((c.g_left, c.h_left));
            sums.push((g - c.g_left, h - c.h_left));
            nodes.push(RegNode::Leaf {
                weight: 0.0,
                cover: c.h_left,
            });
            nodes.push(RegNode::Leaf {
                weight: 0.0,
                cover: h - c.h_left,
            });
            nodes[node] = RegNode::Split {
                feature,
                threshold: c.threshold,
                gain: c.gain,
                cover: h,
                left,
                right,
            };
            split_of[s] = Some((feature, c.threshold, left, right));
            next.push(left);
            next.push(right);
        }
        if next.is_empty() {
            break;
        }
        for (pos, node) in node_of.iter_mut().enumerate() {
            let s = slot[*node as usize];
            if s == NOT_ACTIVE {
                continue;
            }
            if let Some((feature, threshold, left, right)) = split_of[s] {
                *node = if cols.values[feature][pos] <= threshold {
                    left as u32
                } else {
                    right as u32
                };
            }
        }
        frontier = next;
    }

    for (i, node) in nodes.iter_mut().enumerate() {
        if let RegNode::Leaf { weight, .. } = node {
            let (g, h) = sums[i];
            *weight = p.eta * leaf_weight(g, h, p.lambda);
        }
    }
    (RegTree { nodes }, node_of)
}

#[allow(clippy::too_many_arguments)]
fn scan_feature(
    cols: &ColumnIndex,
    feature: usize,
    grad: &[f64],
    hess: &[f64],
    node_of: &[u32],
    slot: &[usize],
    frontier: &[usize],
    sums: &[(f64, f64)],
    p: &XGBParams,
) -> Vec<Option<Candidate>> {
    #[derive(Clone, Copy)]
    struct State {
        g: f64,
        h: f64,
        last: f64,
        started: bool,
    }
    let mut state = vec![
        State {
            g: 0.0,
            h: 0.0,
            last: 0.0,
            started: false,
        };
        frontier.len()
    ];
    let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];
    let values = &cols.values[feature];
    for &pos in &cols.order[feature] {
        let pos = pos as usize;
        let s = slot[node_of[pos] as usize];
        if s == NOT_ACTIVE {
            continue;
        }
        let v = values[pos];
        let st = &mut state[s];
        if st.started && v > st.last {
            let (g, h) = sums[frontier[s]];
            let (g_r, h_r) = (g - st.g, h - st.h);
            if st.h >= p.min_child_weight && h_r >= p.min_child_weight {
                let gain = split_gain(st.g, st.h, g_r, h_r, p.lambda, p.gamma_pen);
                if best[s].is_none_or(|b| gain > b.gain) {
                    best[s] = Some(Candidate {
                        gain,
                        threshold: midpoint(st.last, v),
                        g_left: st.g,
                        h_left: st.h,
                    });
                }
            }
        }
        st.g += grad[pos];
        st.h += hess[pos];
        st.last = v;
        st.started = true;
    }
    best
}

/// Sum of split gains per feature over the trees used for prediction.
pub fn gain_importance(m: &BoostModel) -> Importance {
    let mut raw = vec![0.0; m.feature_names.len()];
    for tree in &m.trees[..m.best_round] {
        for node in &tree.nodes {
            if let RegNode::Split { feature, gain, .. } = *node {
                raw[feature] += gain;
            }
        }
    }
    Importance::from_raw(raw)
}
