//! Confusion matrices, percentage metrics, k-fold cross-validation and
//! grid search over model configurations.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::boost::XGBParams;
use crate::dataset::{kfold, Dataset, Label};
use crate::error::{Error, Result};
use crate::forest::RFParams;
use crate::model::{ModelConfig, TrainedModel};
use crate::par::*;
use crate::svm::SVMParams;

/// Fraud is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&self, o: &ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

pub fn confusion(predicted: &[Label], actual: &[Label]) -> Result<ConfusionMatrix> {
    if predicted.len() != actual.len() {
        return Err(Error::input(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::input("no predictions"));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, a) in predicted.iter().zip(actual) {
        match (p, a) {
            (Label::Fraud, Label::Fraud) => cm.tp += 1,
            (Label::Fraud, Label::NonFraud) => cm.fp += 1,
            (Label::NonFraud, Label::Fraud) => cm.fn_ += 1,
            (Label::NonFraud, Label::NonFraud) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// Percentages in [0, 100]; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub specificity: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub fpr: Option<f64>,
    pub f1: Option<f64>,
}

fn pct(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let recall = pct(cm.tp, cm.tp + cm.fn_);
    let precision = pct(cm.tp, cm.tp + cm.fp);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Metrics {
        specificity: pct(cm.tn, cm.tn + cm.fp),
        recall,
        precision,
        fpr: pct(cm.fp, cm.fp + cm.tn),
        f1,
    }
}

impl Metrics {
    pub const NAMES: [&'static str; 5] = ["Specificity", "Recall", "Precision", "FPR", "F1"];

    pub fn values(&self) -> [Option<f64>; 5] {
        [
            self.specificity,
            self.recall,
            self.precision,
            self.fpr,
            self.f1,
        ]
    }

    fn from_values(v: [Option<f64>; 5]) -> Self {
        Metrics {
            specificity: v[0],
            recall: v[1],
            precision: v[2],
            fpr: v[3],
            f1: v[4],
        }
    }

    /// Arithmetic mean of each metric over the entries where it is defined.
    pub fn mean(all: &[Metrics]) -> Metrics {
        let mut out = [None; 5];
        for (k, slot) in out.iter_mut().enumerate() {
            let defined: Vec<f64> = all.iter().filter_map(|m| m.values()[k]).collect();
            if !defined.is_empty() {
                *slot = Some(defined.iter().sum::<f64>() / defined.len() as f64);
            }
        }
        Metrics::from_values(out)
    }
}

/// `12.35`, or `NA` when undefined.
pub fn fmt_pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.2}"),
        None => "NA".into(),
    }
}

fn fmt_full(v: Option<f64>) -> String {
    match v {
        Some(v) => v.to_string(),
        None => "NA".into(),
    }
}

/// Metrics for one configuration: per-split results plus their mean and
/// the pooled confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub folds: Vec<Metrics>,
    pub fold_confusion: Vec<ConfusionMatrix>,
    pub mean: Metrics,
    pub pooled: ConfusionMatrix,
}

impl Evaluation {
    fn from_confusions(cms: Vec<ConfusionMatrix>) -> Self {
        let folds: Vec<Metrics> = cms.iter().map(metrics).collect();
        let pooled = cms.iter().fold(ConfusionMatrix::default(), |a, c| a.add(c));
        Evaluation {
            mean: Metrics::mean(&folds),
            folds,
            fold_confusion: cms,
            pooled,
        }
    }
}

/// Trains on each fold complement and evaluates on each holdout.
pub fn cross_validate(
    config: &ModelConfig,
    d: &Dataset,
    k: usize,
    seed: u64,
) -> Result<Evaluation> {
    let mut gr = grid_search(std::slice::from_ref(config), d, k, seed)?;
    gr.rows
        .pop()
        .expect("one row")
        .outcome
        .map_err(Error::Training)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub config: ModelConfig,
    pub outcome: std::result::Result<Evaluation, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    /// `"cv"` for k-fold means, `"validation"` for a single held-out split.
    pub kind: String,
    pub rows: Vec<GridRow>,
}

/// Grid search with `k`-fold cross-validation. Folds are shared across all
/// configurations, and configurations that differ only in cutoff reuse
/// the same trained models.
pub fn grid_search(grid: &[ModelConfig], d: &Dataset, k: usize, seed: u64) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::input("empty grid"));
    }
    let folds = kfold(d, k, seed)?;
    let splits: Vec<(Dataset, Dataset)> = folds.iter().map(|f| f.datasets(d)).collect();
    Ok(GridResult {
        kind: "cv".into(),
        rows: run_grid(grid, &splits),
    })
}

/// Trains each configuration on `train` and evaluates on `val`.
pub fn validate_grid(grid: &[ModelConfig], train: &Dataset, val: &Dataset) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::input("empty grid"));
    }
    let splits = vec![(train.clone(), val.clone())];
    Ok(GridResult {
        kind: "validation".into(),
        rows: run_grid(grid, &splits),
    })
}

enum Scores {
    Proba(Vec<f64>),
    Labels(Vec<Label>),
}

fn run_grid(grid: &[ModelConfig], splits: &[(Dataset, Dataset)]) -> Vec<GridRow> {
    let mut keys: Vec<String> = Vec::new();
    let mut key_of: Vec<usize> = Vec::with_capacity(grid.len());
    let mut index: HashMap<String, usize> = HashMap::new();
    for c in grid {
        let key = c.training_key();
        let next = keys.len();
        let i = *index.entry(key.clone()).or_insert(next);
        if i == next {
            keys.push(key);
        }
        key_of.push(i);
    }
    let first_config: Vec<&ModelConfig> = (0..keys.len())
        .map(|k| &grid[key_of.iter().position(|&x| x == k).unwrap()])
        .collect();

    let jobs: Vec<(usize, usize)> = (0..keys.len())
        .flat_map(|k| (0..splits.len()).map(move |s| (k, s)))
        .collect();
    let scores: Vec<std::result::Result<Scores, String>> = jobs
        .par_iter()
        .map(|&(k, s)| {
            let (train, holdout) = &splits[s];
            let fail = |e: Error| {
                if splits.len() > 1 {
                    format!("fold {}: {e}", s + 1)
                } else {
                    e.to_string()
                }
            };
            let model = first_config[k].train(train).map_err(fail)?;
            Ok(match &model {
                TrainedModel::Svm(_) => Scores::Labels(model.predict(holdout, None).map_err(fail)?),
                m => Scores::Proba(m.predict_proba(holdout).expect("tree model")),
            })
        })
        .collect();

    grid.iter()
        .zip(&key_of)
        .map(|(config, &k)| {
            let outcome = (0..splits.len())
                .map(|s| {
                    let actual = splits[s].1.labels();
                    let predicted = match &scores[k * splits.len() + s] {
                        Err(e) => return Err(e.clone()),
                        Ok(Scores::Labels(l)) => l.clone(),
                        Ok(Scores::Proba(p)) => {
                            let c = config.cutoff().expect("tree config");
                            p.iter().map(|&p| crate::forest::classify(p, c)).collect()
                        }
                    };
                    confusion(&predicted, actual).map_err(|e| e.to_string())
                })
                .collect::<std::result::Result<Vec<_>, String>>()
                .map(Evaluation::from_confusions);
            GridRow {
                config: config.clone(),
                outcome,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    MaxRecall,
    MinFpr,
    MaxF1,
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max_recall" => Ok(Criterion::MaxRecall),
            "min_fpr" => Ok(Criterion::MinFpr),
            "max_f1" => Ok(Criterion::MaxF1),
            other => Err(Error::input(format!("unknown criterion {other:?}"))),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::MaxRecall => "max_recall",
            Criterion::MinFpr => "min_fpr",
            Criterion::MaxF1 => "max_f1",
        })
    }
}

/// Index of the best row; ties go to the earlier grid position.
pub fn select_config(gr: &GridResult, criterion: Criterion) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, row) in gr.rows.iter().enumerate() {
        let Ok(ev) = &row.outcome else { continue };
        let value = match criterion {
            Criterion::MaxRecall => ev.mean.recall,
            Criterion::MinFpr => ev.mean.fpr.map(|v| -v),
            Criterion::MaxF1 => ev.mean.f1,
        };
        if let Some(v) = value {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::input(format!("no grid row defines {criterion}")))
}

/// 20 forest configurations: mtry varies fastest, then min_node_size, then cutoff.
pub fn rf_reference_grid(base: &RFParams) -> Vec<ModelConfig> {
    let mut grid = Vec::with_capacity(20);
    for cutoff in [0.5, 0.65, 0.8, 0.9, 0.99] {
        for min_node_size in [1, 10] {
            for mtry in [3, 6] {
                grid.push(ModelConfig::Rf(RFParams {
                    mtry,
                    min_node_size,
                    cutoff,
                    ..base.clone()
                }));
            }
        }
    }
    grid
}

/// 20 SVM configurations: gamma varies fastest within each cost.
pub fn svm_reference_grid(base: &SVMParams) -> Vec<ModelConfig> {
    let mut grid = Vec::with_capacity(20);
    for cost in [1.0, 5.0, 10.0, 50.0] {
        for gamma in [0.077, 0.1, 0.5, 1.0, 2.0] {
            grid.push(ModelConfig::Svm(SVMParams {
                cost,
                gamma,
                ..base.clone()
            }));
        }
    }
    grid
}

/// Boosting grid over depth, column sampling and cutoff.
pub fn xgb_reference_grid(base: &XGBParams) -> Vec<ModelConfig> {
    let mut grid = Vec::new();
    for cutoff in [0.5, 0.65, 0.8, 0.9, 0.99] {
        for colsample in [0.25, 0.5] {
            for max_depth in [3, 6] {
                grid.push(ModelConfig::Xgb(XGBParams {
                    max_depth,
                    colsample,
                    cutoff,
                    ..base.clone()
                }));
            }
        }
    }
    grid
}

/// The hyperparameters reported in result tables for each family.
pub fn config_columns(c: &ModelConfig) -> Vec<(&'static str, String)> {
    match c {
        ModelConfig::Rf(p) => vec![
            ("mtry", p.mtry.to_string()),
            ("min_node_size", p.min_node_size.to_string()),
            ("cutoff", p.cutoff.to_string()),
        ],
        ModelConfig::Xgb(p) => vec![
            ("max_depth", p.max_depth.to_string()),
            ("colsample", p.colsample.to_string()),
            ("min_child_weight", p.min_child_weight.to_string()),
            ("cutoff", p.cutoff.to_string()),
        ],
        ModelConfig::Svm(p) => vec![("cost", p.cost.to_string()), ("gamma", p.gamma.to_string())],
    }
}

/// `conf,<config columns>,Specificity,Recall,Precision,FPR,F1,error`.
pub fn write_grid_csv(path: impl AsRef<Path>, gr: &GridResult) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let cols: Vec<&str> = gr
        .rows
        .first()
        .map(|r| {
            config_columns(&r.config)
                .into_iter()
                .map(|(k, _)| k)
                .collect()
        })
        .unwrap_or_default();
    let mut header = vec!["conf"];
    header.extend(&cols);
    header.extend(Metrics::NAMES);
    header.push("error");
    w.write_record(&header)?;
    for (i, row) in gr.rows.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(config_columns(&row.config).into_iter().map(|(_, v)| v));
        match &row.outcome {
            Ok(ev) => {
                rec.extend(ev.mean.values().iter().map(|v| fmt_full(*v)));
                rec.push(String::new());
            }
            Err(e) => {
                rec.extend(std::iter::repeat_n("NA".to_string(), 5));
                rec.push(e.clone());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Confusion matrix in the prediction-by-actual layout.
pub fn write_confusion_csv(path: impl AsRef<Path>, cm: &ConfusionMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(
        f,
        "prediction,actual_fraud,actual_nonfraud,total\nfraud,{},{},{}\nnonfraud,{},{},{}\ntotal,{},{},{}",
        cm.tp,
        cm.fp,
        cm.tp + cm.fp,
        cm.fn_,
        cm.tn,
        cm.fn_ + cm.tn,
        cm.tp + cm.fn_,
        cm.fp + cm.tn,
        cm.total()
    )
    .map_err(|e| Error::io(path, e))
}
