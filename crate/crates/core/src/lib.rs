//! Detection of fraudulent accounts on Ethereum-style blockchains.
//!
//! The crate covers the whole experiment pipeline: transaction ingestion
//! (Etherscan-compatible HTTP API or local CSV), per-account feature
//! aggregation, dataset splitting, three from-scratch classifiers (random
//! forest, second-order gradient boosting, RBF-kernel SVM trained by SMO),
//! cross-validated grid search, variable importance and feature ablation.
//! A seeded synthetic corpus generator stands in for a real crawl.
//!
//! Data-parallel loops (trees of a forest, grid cells, per-account feature
//! extraction, batch prediction) run on rayon when the `parallel` feature is
//! enabled and fall back to plain iterators otherwise. Every random draw
//! comes from a stream derived from an explicit seed, so results do not
//! depend on the thread count.

pub mod boost;
pub mod cart;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod ingest;
pub mod model;
pub mod par;
pub mod rng;
pub mod sensitivity;
pub mod svm;
pub mod synth;

pub use dataset::{Dataset, Label, Standardizer};
pub use error::{Error, Result};
pub use features::{FeatureVector, FEATURE_NAMES};
pub use ingest::{LabelSet, Transaction, TxMap};
pub use model::{ModelConfig, ModelFamily, TrainedModel};
