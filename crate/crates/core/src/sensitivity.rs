//! Feature ranking by model importance and re-training with the top-ranked
//! features removed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boost::gain_importance;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{confusion, metrics, ConfusionMatrix, Metrics};
use crate::forest::{gini_importance, Importance};
use crate::model::{ModelConfig, ModelFamily, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub raw: f64,
    pub normalized: f64,
}

/// Entries sorted by raw score, descending, ties alphabetical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub model_type: ModelFamily,
    pub entries: Vec<ImportanceEntry>,
}

impl ImportanceReport {
    fn new(model_type: ModelFamily, names: &[String], imp: Importance) -> Self {
        let mut entries: Vec<ImportanceEntry> = names
            .iter()
            .zip(imp.raw.iter().zip(&imp.normalized))
            .map(|(f, (&raw, &normalized))| ImportanceEntry {
                feature: f.clone(),
                raw,
                normalized,
            })
            .collect();
        entries.sort_by(|a, b| {
            b.raw
                .total_cmp(&a.raw)
                .then_with(|| a.feature.cmp(&b.feature))
        });
        Self {
            model_type,
            entries,
        }
    }

    pub fn top(&self, n: usize) -> Vec<String> {
        self.entries
            .iter()
            .take(n)
            .map(|e| e.feature.clone())
            .collect()
    }

    /// `feature,raw,normalized`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["feature", "raw", "normalized"])?;
        for e in &self.entries {
            w.write_record([
                e.feature.clone(),
                e.raw.to_string(),
                e.normalized.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a CSV written by [`ImportanceReport::write_csv`]; the order of
    /// rows is kept as written.
    pub fn read_csv(path: impl AsRef<Path>, model_type: ModelFamily) -> Result<Self> {
        let mut r = csv::Reader::from_path(path.as_ref())?;
        let entries = r
            .deserialize()
            .collect::<std::result::Result<Vec<ImportanceEntry>, _>>()?;
        if entries.is_empty() {
            return Err(Error::input("importance file has no rows"));
        }
        Ok(Self {
            model_type,
            entries,
        })
    }
}

pub fn rank_features(model: &TrainedModel) -> Result<ImportanceReport> {
    match model {
        TrainedModel::Rf(m) => Ok(ImportanceReport::new(
            ModelFamily::Rf,
            &m.feature_names,
            gini_importance(m),
        )),
        TrainedModel::Xgb(m) => Ok(ImportanceReport::new(
            ModelFamily::Xgb,
            &m.feature_names,
            gain_importance(m),
        )),
        TrainedModel::Svm(_) => Err(Error::Unsupported(
            "feature importance is not defined for SVM models".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub n_excluded: usize,
    pub excluded: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

/// Drops the top-`n` features of `report` from both datasets, re-trains
/// `config` with its own seed and evaluates on `val`. Boosted models are
/// re-trained for every round, without early stopping.
pub fn ablate(
    train: &Dataset,
    val: &Dataset,
    config: &ModelConfig,
    report: &ImportanceReport,
    n: usize,
) -> Result<AblationResult> {
    if n >= train.n_features() {
        return Err(Error::input(format!(
            "cannot exclude {n} of {} features",
            train.n_features()
        )));
    }
    if n > report.entries.len() {
        return Err(Error::input(format!(
            "importance report ranks only {} features",
            report.entries.len()
        )));
    }
    let excluded = report.top(n);
    let train = train.without_features(&excluded)?;
    let val = val.without_features(&excluded)?;
    let config = match config {
        ModelConfig::Xgb(p) => {
            let mut p = p.clone();
            p.early_stop_rounds = None;
            ModelConfig::Xgb(p)
        }
        other => other.clone(),
    };
    let model = config.train(&train)?;
    let cm = confusion(&model.predict(&val, None)?, val.labels())?;
    Ok(AblationResult {
        n_excluded: n,
        excluded,
        confusion: cm,
        metrics: metrics(&cm),
    })
}

/// `n_excluded,excluded,Specificity,Recall,Precision,FPR,F1`.
pub fn write_ablation_csv(path: impl AsRef<Path>, rows: &[AblationResult]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["n_excluded", "excluded"];
    header.extend(Metrics::NAMES);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.n_excluded.to_string(), r.excluded.join(";")];
        rec.extend(r.metrics.values().iter().map(|v| match v {
            Some(v) => v.to_string(),
            None => "NA".into(),
        }));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
