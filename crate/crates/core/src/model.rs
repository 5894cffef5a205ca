//! Model-family dispatch and the versioned model file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boost::{train_boost, BoostModel, XGBParams};
use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};
use crate::forest::{classify, train_forest, validate_cutoff, ForestModel, RFParams};
use crate::svm::{train_svm_standardized, SVMModel, SVMParams};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Rf,
    Xgb,
    Svm,
}

impl ModelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Rf => "rf",
            ModelFamily::Xgb => "xgb",
            ModelFamily::Svm => "svm",
        }
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rf" => Ok(ModelFamily::Rf),
            "xgb" => Ok(ModelFamily::Xgb),
            "svm" => Ok(ModelFamily::Svm),
            other => Err(Error::input(format!("unknown model family {other:?}"))),
        }
    }
}

/// One training configuration. SVM configurations always train on
/// standardized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_type", rename_all = "lowercase")]
pub enum ModelConfig {
    Rf(RFParams),
    Xgb(XGBParams),
    Svm(SVMParams),
}

impl ModelConfig {
    pub fn family(&self) -> ModelFamily {
        match self {
            ModelConfig::Rf(_) => ModelFamily::Rf,
            ModelConfig::Xgb(_) => ModelFamily::Xgb,
            ModelConfig::Svm(_) => ModelFamily::Svm,
        }
    }

    /// Parses a configuration object, filling in `model_type` when absent.
    pub fn from_json(family: ModelFamily, v: serde_json::Value) -> Result<Self> {
        let v = match v {
            serde_json::Value::Object(mut m) => {
                let tag = m
                    .entry("model_type")
                    .or_insert_with(|| family.as_str().into());
                if tag.as_str() != Some(family.as_str()) {
                    return Err(Error::input(format!(
                        "configuration model_type {tag} does not match {}",
                        family.as_str()
                    )));
                }
                serde_json::Value::Object(m)
            }
            other => {
                return Err(Error::input(format!(
                    "configuration must be an object, got {other}"
                )))
            }
        };
        Ok(serde_json::from_value(v)?)
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            ModelConfig::Rf(p) => Some(p.seed),
            ModelConfig::Xgb(p) => Some(p.seed),
            ModelConfig::Svm(_) => None,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        match &mut c {
            ModelConfig::Rf(p) => p.seed = seed,
            ModelConfig::Xgb(p) => p.seed = seed,
            ModelConfig::Svm(_) => {}
        }
        c
    }

    /// `None` for SVM, which reports hard labels only.
    pub fn cutoff(&self) -> Option<f64> {
        match self {
            ModelConfig::Rf(p) => Some(p.cutoff),
            ModelConfig::Xgb(p) => Some(p.cutoff),
            ModelConfig::Svm(_) => None,
        }
    }

    pub fn with_cutoff(&self, cutoff: f64) -> Self {
        let mut c = self.clone();
        match &mut c {
            ModelConfig::Rf(p) => p.cutoff = cutoff,
            ModelConfig::Xgb(p) => p.cutoff = cutoff,
            ModelConfig::Svm(_) => {}
        }
        c
    }

    /// Configurations differing only in cutoff share a key, since the
    /// cutoff is applied after training.
    pub fn training_key(&self) -> String {
        serde_json::to_string(&self.with_cutoff(0.5)).expect("config serializes")
    }

    pub fn train(&self, d: &Dataset) -> Result<TrainedModel> {
        Ok(match self {
            ModelConfig::Rf(p) => TrainedModel::Rf(train_forest(d, p)?),
            ModelConfig::Xgb(p) => TrainedModel::Xgb(train_boost(d, p)?),
            ModelConfig::Svm(p) => TrainedModel::Svm(train_svm_standardized(d, p)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_type", rename_all = "lowercase")]
pub enum TrainedModel {
    Rf(ForestModel),
    Xgb(BoostModel),
    Svm(SVMModel),
}

impl TrainedModel {
    pub fn family(&self) -> ModelFamily {
        match self {
            TrainedModel::Rf(_) => ModelFamily::Rf,
            TrainedModel::Xgb(_) => ModelFamily::Xgb,
            TrainedModel::Svm(_) => ModelFamily::Svm,
        }
    }

    pub fn feature_names(&self) -> &[String] {
        match self {
            TrainedModel::Rf(m) => &m.feature_names,
            TrainedModel::Xgb(m) => &m.feature_names,
            TrainedModel::Svm(m) => &m.feature_names,
        }
    }

    pub fn default_cutoff(&self) -> Option<f64> {
        match self {
            TrainedModel::Rf(m) => Some(m.params.cutoff),
            TrainedModel::Xgb(m) => Some(m.params.cutoff),
            TrainedModel::Svm(_) => None,
        }
    }

    /// Non-fraud probabilities; `None` for SVM.
    pub fn predict_proba(&self, d: &Dataset) -> Option<Vec<f64>> {
        match self {
            TrainedModel::Rf(m) => Some(m.predict_proba(d)),
            TrainedModel::Xgb(m) => Some(m.predict_proba(d)),
            TrainedModel::Svm(_) => None,
        }
    }

    /// Hard labels. `cutoff` overrides the trained one and is ignored by SVM.
    pub fn predict(&self, d: &Dataset, cutoff: Option<f64>) -> Result<Vec<Label>> {
        self.check_columns(d)?;
        match (self, self.predict_proba(d)) {
            (TrainedModel::Svm(m), _) => Ok(m.predict(d)),
            (_, Some(p)) => {
                let c = cutoff
                    .or(self.default_cutoff())
                    .expect("tree models carry a cutoff");
                validate_cutoff(c)?;
                Ok(p.into_iter().map(|p| classify(p, c)).collect())
            }
            _ => unreachable!(),
        }
    }

    fn check_columns(&self, d: &Dataset) -> Result<()> {
        if d.feature_names() != self.feature_names() {
            return Err(Error::input(format!(
                "data columns {:?} do not match model columns {:?}",
                d.feature_names(),
                self.feature_names()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    #[serde(flatten)]
    pub model: TrainedModel,
}

impl ModelFile {
    pub fn save(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model: model.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&s)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Unsupported(format!(
                "model format version {} (expected {MODEL_FORMAT_VERSION})",
                file.format_version
            )));
        }
        Ok(file.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::toy;

    #[test]
    fn config_json_round_trip() {
        let c = ModelConfig::from_json(
            ModelFamily::Rf,
            serde_json::json!({"mtry": 6, "min_node_size": 10, "cutoff": 0.99}),
        )
        .unwrap();
        let ModelConfig::Rf(p) = &c else { panic!() };
        assert_eq!((p.mtry, p.min_node_size, p.n_trees), (6, 10, 500));
        let back: ModelConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(ModelConfig::from_json(ModelFamily::Rf, serde_json::json!({"bogus": 1})).is_err());
        assert!(
            ModelConfig::from_json(ModelFamily::Svm, serde_json::json!({"model_type": "rf"}))
                .is_err()
        );
    }

    #[test]
    fn training_key_ignores_cutoff() {
        let a = ModelConfig::Rf(RFParams::default());
        assert_eq!(a.training_key(), a.with_cutoff(0.9).training_key());
        let b = ModelConfig::Rf(RFParams {
            mtry: 6,
            ..Default::default()
        });
        assert_ne!(a.training_key(), b.training_key());
    }

    #[test]
    fn model_file_round_trip() {
        let labels: Vec<Label> = (0..30)
            .map(|i| {
                if i % 3 == 0 {
                    Label::Fraud
                } else {
                    Label::NonFraud
                }
            })
            .collect();
        let d = toy(&labels, 3, 1);
        let dir = tempfile::tempdir().unwrap();
        for c in [
            ModelConfig::Rf(RFParams {
                n_trees: 5,
                ..Default::default()
            }),
            ModelConfig::Xgb(XGBParams {
                n_rounds: 5,
                ..Default::default()
            }),
            ModelConfig::Svm(SVMParams::default()),
        ] {
            let m = c.train(&d).unwrap();
            let path = dir.path().join("m.json");
            ModelFile::save(&m, &path).unwrap();
            let back = ModelFile::load(&path).unwrap();
            assert_eq!(back.family(), c.family());
            assert_eq!(
                back.predict(&d, None).unwrap(),
                m.predict(&d, None).unwrap()
            );
            let text = std::fs::read_to_string(&path).unwrap();
            assert!(text.contains(&format!("\"model_type\": \"{}\"", c.family().as_str())));
        }
    }
}
