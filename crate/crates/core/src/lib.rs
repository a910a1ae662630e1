//! Nationality prediction from romanized personal names: dataset
//! preparation, character n-gram classifiers, and an evaluation suite that
//! scores any ranked prediction source at nationality, region and continent
//! granularity.

pub mod dataset;
pub mod evaluation;
pub mod features;
pub mod linear_model;
pub mod report;
pub mod rng;
pub mod shallow_model;
pub mod taxonomy;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One ranked candidate with its model score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub label: String,
    pub score: f64,
}

/// The `k` best entries of `scores` ordered by (score desc, label asc).
/// `labels` must be sorted ascending and aligned with `scores`.
pub fn rank_top_k(labels: &[String], scores: &[f64], k: usize) -> Vec<ScoredLabel> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(labels[a].cmp(&labels[b]))
    });
    order
        .into_iter()
        .take(k)
        .map(|i| ScoredLabel {
            label: labels[i].clone(),
            score: scores[i],
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training data has fewer than two classes")]
    SingleClass,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("training set is empty")]
    Empty,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("vocabulary fingerprint mismatch: model expects {expected}, got {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("model file is not a {expected} model (found `{found}`)")]
    WrongKind {
        expected: &'static str,
        found: String,
    },
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("model file incompatible: {0}")]
    Incompatible(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("encoding error: {0}")]
    Encoding(#[from] bincode::Error),
}
