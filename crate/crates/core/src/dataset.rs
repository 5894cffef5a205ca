//! Labeled feature matrices, stratified splitting, k-fold partitioning and
//! standardization.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};

/// Fraud is the positive class everywhere in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Fraud,
    NonFraud,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Fraud => "fraud",
            Label::NonFraud => "nonfraud",
        }
    }

    pub fn is_fraud(self) -> bool {
        self == Label::Fraud
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fraud" => Ok(Label::Fraud),
            "nonfraud" => Ok(Label::NonFraud),
            other => Err(Error::input(format!(
                "unknown label {other:?} (expected fraud or nonfraud)"
            ))),
        }
    }
}

/// Row-major labeled feature matrix. Addresses are unique, every value is
/// finite and all rows share the width of `feature_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_names: Vec<String>,
    addresses: Vec<String>,
    labels: Vec<Label>,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        addresses: Vec<String>,
        labels: Vec<Label>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let width = feature_names.len();
        if width == 0 {
            return Err(Error::input("dataset needs at least one feature"));
        }
        if addresses.len() != labels.len() || values.len() != width * labels.len() {
            return Err(Error::input(format!(
                "inconsistent dataset shape: {} addresses, {} labels, {} values for {} features",
                addresses.len(),
                labels.len(),
                values.len(),
                width
            )));
        }
        let mut seen = HashSet::with_capacity(addresses.len());
        for a in &addresses {
            if !seen.insert(a.as_str()) {
                return Err(Error::input(format!("duplicate address {a}")));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "non-finite value in row {} ({})",
                pos / width,
                addresses[pos / width]
            )));
        }
        Ok(Self {
            feature_names,
            addresses,
            labels,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn addresses(&self) -> &[String] {
        &self.addresses
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, row: usize) -> Label {
        self.labels[row]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let w = self.n_features();
        &self.values[row * w..(row + 1) * w]
    }

    #[inline]
    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.feature_names.len() + feature]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_features())
    }

    pub fn column(&self, feature: usize) -> Vec<f64> {
        self.rows().map(|r| r[feature]).collect()
    }

    /// `(n_fraud, n_nonfraud)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let fraud = self.labels.iter().filter(|l| l.is_fraud()).count();
        (fraud, self.len() - fraud)
    }

    pub fn require_both_classes(&self) -> Result<()> {
        let (f, n) = self.class_counts();
        if f == 0 || n == 0 {
            return Err(Error::input(format!(
                "both classes required, found {f} fraud and {n} nonfraud rows"
            )));
        }
        Ok(())
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// Rows at `indices`, in that order. Indices must be distinct.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let w = self.n_features();
        let mut values = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Dataset {
            feature_names: self.feature_names.clone(),
            addresses: indices.iter().map(|&i| self.addresses[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            values,
        }
    }

    /// Copy without the named columns.
    pub fn without_features(&self, names: &[String]) -> Result<Dataset> {
        let mut drop = vec![false; self.n_features()];
        for name in names {
            let idx = self
                .feature_index(name)
                .ok_or_else(|| Error::input(format!("unknown feature {name:?}")))?;
            drop[idx] = true;
        }
        let keep: Vec<usize> = (0..self.n_features()).filter(|&j| !drop[j]).collect();
        if keep.is_empty() {
            return Err(Error::input("cannot drop every feature"));
        }
        let values = self
            .rows()
            .flat_map(|r| keep.iter().map(move |&j| r[j]))
            .collect();
        Ok(Dataset {
            feature_names: keep
                .iter()
                .map(|&j| self.feature_names[j].clone())
                .collect(),
            addresses: self.addresses.clone(),
            labels: self.labels.clone(),
            values,
        })
    }

    /// Reads the feature table CSV (`address,label,<features...>`).
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(std::io::BufReader::new(file));
        let headers = rdr.headers()?.clone();
        if headers.len() < 3 || &headers[0] != "address" || &headers[1] != "label" {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 1,
                msg: "expected header address,label,<features...>".into(),
            });
        }
        let feature_names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        let mut addresses = Vec::new();
        let mut labels = Vec::new();
        let mut values = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let err = |msg: String| Error::Parse {
                path: path.display().to_string(),
                line,
                msg,
            };
            if record.len() != headers.len() {
                return Err(err(format!(
                    "expected {} fields, found {}",
                    headers.len(),
                    record.len()
                )));
            }
            addresses.push(record[0].to_string());
            labels.push(record[1].parse().map_err(|e: Error| err(e.to_string()))?);
            for field in record.iter().skip(2) {
                values.push(
                    field
                        .parse::<f64>()
                        .map_err(|e| err(format!("{field:?}: {e}")))?,
                );
            }
        }
        Dataset::new(feature_names, addresses, labels, values)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut wtr = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let mut header = vec!["address".to_string(), "label".to_string()];
        header.extend(self.feature_names.iter().cloned());
        wtr.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for (i, row) in self.rows().enumerate() {
            record.clear();
            record.push(self.addresses[i].clone());
            record.push(self.labels[i].to_string());
            record.extend(row.iter().map(f64::to_string));
            wtr.write_record(&record)?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    fn class_indices(&self) -> [Vec<usize>; 2] {
        let mut fraud = Vec::new();
        let mut nonfraud = Vec::new();
        for (i, l) in self.labels.iter().enumerate() {
            if l.is_fraud() {
                fraud.push(i)
            } else {
                nonfraud.push(i)
            }
        }
        [fraud, nonfraud]
    }
}

/// Index-level stratified split: per class, a seeded shuffle and the first
/// `round(n_class * train_fraction)` rows go to training. Both index lists
/// are returned in ascending order.
pub fn stratified_split_indices(
    d: &Dataset,
    train_fraction: f64,
    seed: u64,
    stream: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::input(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    d.require_both_classes()?;
    let mut rng = rng::stream(seed, stream);
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for mut class in d.class_indices() {
        class.shuffle(&mut rng);
        let n_train = (class.len() as f64 * train_fraction).round() as usize;
        train.extend_from_slice(&class[..n_train]);
        holdout.extend_from_slice(&class[n_train..]);
    }
    train.sort_unstable();
    holdout.sort_unstable();
    Ok((train, holdout))
}

/// Splits into `(train, validation)` preserving class proportions to within
/// one row per class. Deterministic in `seed`.
pub fn stratified_split(d: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, val) = stratified_split_indices(d, train_fraction, seed, streams::SPLIT)?;
    Ok((d.subset(&train), d.subset(&val)))
}

/// One cross-validation fold as row indices into the source dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
}

impl Fold {
    pub fn datasets(&self, d: &Dataset) -> (Dataset, Dataset) {
        (d.subset(&self.train), d.subset(&self.holdout))
    }
}

/// Stratified k-fold partition. Each class is shuffled, the fraud list is
/// followed by the nonfraud list, and position `p` goes to fold `p mod k`;
/// holdout sizes therefore differ by at most one and each fold gets its
/// share of every class.
pub fn kfold(d: &Dataset, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::input(format!("k must be at least 2, got {k}")));
    }
    let (n_fraud, n_nonfraud) = d.class_counts();
    let minority = n_fraud.min(n_nonfraud);
    if k > minority {
        return Err(Error::input(format!(
            "k = {k} exceeds the minority class size {minority}"
        )));
    }
    let mut rng = rng::stream(seed, streams::KFOLD);
    let mut assignment = vec![0usize; d.len()];
    let mut position = 0usize;
    for mut class in d.class_indices() {
        class.shuffle(&mut rng);
        for i in class {
            assignment[i] = position % k;
            position += 1;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (holdout, train) = (0..d.len()).partition(|&i| assignment[i] == f);
            Fold { train, holdout }
        })
        .collect())
}

/// Per-feature z-scoring fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns with zero spread; their std is forced to 1.
    pub constant: Vec<bool>,
    pub n_rows: usize,
}

impl Standardizer {
    /// Population mean and standard deviation per column.
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::input(
                "cannot fit a standardizer on an empty dataset",
            ));
        }
        let n = train.len() as f64;
        let w = train.n_features();
        let mut mean = vec![0.0; w];
        for row in train.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; w];
        for row in train.rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut constant = vec![false; w];
        let std = var
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let sd = (s / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    log::warn!(
                        "feature {} is constant in the training data",
                        train.feature_names()[j]
                    );
                    constant[j] = true;
                    1.0
                }
            })
            .collect();
        Ok(Self {
            mean,
            std,
            constant,
            n_rows: train.len(),
        })
    }

    pub fn transform_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn transform(&self, d: &Dataset) -> Result<Dataset> {
        if d.n_features() != self.mean.len() {
            return Err(Error::input(format!(
                "standardizer fitted on {} features, dataset has {}",
                self.mean.len(),
                d.n_features()
            )));
        }
        let values = d.rows().flat_map(|r| self.transform_row(r)).collect();
        Ok(Dataset {
            feature_names: d.feature_names.clone(),
            addresses: d.addresses.clone(),
            labels: d.labels.clone(),
            values,
        })
    }
}
