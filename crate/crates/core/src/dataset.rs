//! Corpus ingestion and the preprocessing pipeline: frequency filter,
//! per-label cap, stratified 8:1:1 split, seeded shuffles.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::{derive_seed, SplitMix64};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// How multi-nationality entries of the JSON corpus form are flattened.
pub const FLATTENING_RULE: &str = "one record per (name, nationality) pair";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Format {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("invalid preprocess config: {0}")]
    Config(String),
    #[error("input has no records")]
    Empty,
    #[error("no label has at least {min_samples} records")]
    EmptyAfterFilter { min_samples: usize },
    #[error("manifest error: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NameRecord {
    pub name: String,
    pub nationality: String,
}

impl NameRecord {
    pub fn new(name: impl Into<String>, nationality: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            nationality: nationality.into(),
        }
    }
}

/// Reads a corpus file: `name<TAB>nationality` lines, or a JSON object
/// mapping each name to a list of nationalities.
pub fn load_raw(path: impl AsRef<Path>) -> Result<Vec<NameRecord>, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let display = path.display().to_string();
    if text.trim_start().starts_with('{') {
        parse_json_corpus(&text, &display)
    } else {
        parse_tsv(&text, &display)
    }
}

pub fn parse_tsv(text: &str, source: &str) -> Result<Vec<NameRecord>, DatasetError> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let err = |reason: &str| DatasetError::Format {
            path: source.to_string(),
            line: i + 1,
            reason: reason.into(),
        };
        let (name, nat) = raw
            .rsplit_once('\t')
            .ok_or_else(|| err("expected name<TAB>nationality"))?;
        let (name, nat) = (name.trim(), nat.trim());
        if name.is_empty() {
            return Err(err("empty name"));
        }
        if nat.is_empty() {
            return Err(err("empty nationality"));
        }
        records.push(NameRecord::new(name, nat));
    }
    Ok(records)
}

fn parse_json_corpus(text: &str, source: &str) -> Result<Vec<NameRecord>, DatasetError> {
    let map: BTreeMap<String, Vec<String>> =
        serde_json::from_str(text).map_err(|e| DatasetError::Format {
            path: source.to_string(),
            line: e.line(),
            reason: e.to_string(),
        })?;
    let mut records = Vec::new();
    for (name, nats) in map {
        let name = name.trim();
        if name.is_empty() {
            return Err(DatasetError::Format {
                path: source.into(),
                line: 0,
                reason: "empty name key".into(),
            });
        }
        records.extend(
            nats.iter()
                .map(|n| n.trim())
                .filter(|n| !n.is_empty())
                .map(|n| NameRecord::new(name, n)),
        );
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub min_samples: usize,
    pub cap: usize,
    /// (train, dev, test)
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            min_samples: 500,
            cap: 800,
            ratios: (0.8, 0.1, 0.1),
            seed: 0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let (a, b, c) = self.ratios;
        if self.min_samples < 1 {
            return Err(DatasetError::Config("min_samples must be >= 1".into()));
        }
        if self.cap < self.min_samples {
            return Err(DatasetError::Config(format!(
                "cap {} < min_samples {}",
                self.cap, self.min_samples
            )));
        }
        if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(DatasetError::Config(format!(
                "ratios {:?} must be in [0,1] and sum to 1",
                self.ratios
            )));
        }
        Ok(())
    }

    /// Per-label allocation: dev and test get `round_half_up(ratio * n)`,
    /// train takes the remainder.
    pub fn allocate(&self, n: usize) -> (usize, usize, usize) {
        let round = |r: f64| ((r * n as f64) + 0.5).floor() as usize;
        let dev = round(self.ratios.1).min(n);
        let test = round(self.ratios.2).min(n - dev);
        (n - dev - test, dev, test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Vec<NameRecord>,
    pub dev: Vec<NameRecord>,
    pub test: Vec<NameRecord>,
    pub seed: u64,
    pub config: PreprocessConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub raw: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl LabelCounts {
    pub fn total(&self) -> usize {
        self.train + self.dev + self.test
    }
}

impl SplitDataset {
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.train.iter().map(|r| r.nationality.clone()).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn label_counts(&self) -> BTreeMap<String, LabelCounts> {
        let mut out: BTreeMap<String, LabelCounts> = BTreeMap::new();
        for r in &self.train {
            out.entry(r.nationality.clone()).or_default().train += 1;
        }
        for r in &self.dev {
            out.entry(r.nationality.clone()).or_default().dev += 1;
        }
        for r in &self.test {
            out.entry(r.nationality.clone()).or_default().test += 1;
        }
        out
    }

    pub fn train_counts(&self) -> BTreeMap<String, usize> {
        self.label_counts()
            .into_iter()
            .map(|(l, c)| (l, c.train))
            .collect()
    }

    /// Writes `train.tsv`, `dev.tsv`, `test.tsv` and `manifest.json` to `dir`.
    pub fn write(
        &self,
        dir: impl AsRef<Path>,
        raw_counts: &BTreeMap<String, usize>,
    ) -> Result<Manifest, DatasetError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut hasher = Sha256::new();
        for (file, records) in [
            ("train.tsv", &self.train),
            ("dev.tsv", &self.dev),
            ("test.tsv", &self.test),
        ] {
            let text = to_tsv(records);
            hasher.update(file.as_bytes());
            hasher.update(text.as_bytes());
            let path = dir.join(file);
            std::fs::write(&path, text).map_err(|source| DatasetError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        let mut labels = self.label_counts();
        for (label, counts) in labels.iter_mut() {
            counts.raw = raw_counts.get(label).copied().unwrap_or(0);
        }
        let manifest = Manifest {
            format_version: MANIFEST_FORMAT_VERSION,
            config: self.config.clone(),
            seed: self.seed,
            flattening: FLATTENING_RULE.to_string(),
            n_labels: labels.len(),
            totals: LabelCounts {
                raw: raw_counts.values().sum(),
                train: self.train.len(),
                dev: self.dev.len(),
                test: self.test.len(),
            },
            labels,
            fingerprint: hex::encode(hasher.finalize()),
        };
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        std::fs::write(&path, json + "\n").map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(manifest)
    }

    /// Reads a split directory written by [`SplitDataset::write`].
    pub fn read(dir: impl AsRef<Path>) -> Result<(Self, Manifest), DatasetError> {
        let dir = dir.as_ref();
        let manifest_path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&manifest_path).map_err(|source| DatasetError::Io {
            path: manifest_path.display().to_string(),
            source,
        })?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        if manifest.format_version != MANIFEST_FORMAT_VERSION {
            return Err(DatasetError::Manifest(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let split = Self {
            train: load_raw(dir.join("train.tsv"))?,
            dev: load_raw(dir.join("dev.tsv"))?,
            test: load_raw(dir.join("test.tsv"))?,
            seed: manifest.seed,
            config: manifest.config.clone(),
        };
        if split.train.len() != manifest.totals.train
            || split.dev.len() != manifest.totals.dev
            || split.test.len() != manifest.totals.test
        {
            return Err(DatasetError::Manifest(
                "split sizes disagree with manifest".into(),
            ));
        }
        Ok((split, manifest))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: PreprocessConfig,
    pub seed: u64,
    pub flattening: String,
    pub n_labels: usize,
    pub totals: LabelCounts,
    pub labels: BTreeMap<String, LabelCounts>,
    /// SHA-256 over the three split files.
    pub fingerprint: String,
}

pub fn to_tsv(records: &[NameRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 24);
    for r in records {
        let _ = writeln!(out, "{}\t{}", r.name, r.nationality);
    }
    out
}

pub fn raw_label_counts(records: &[NameRecord]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.nationality.clone()).or_insert(0) += 1;
    }
    counts
}

/// Filter, cap, split and shuffle.
///
/// Per surviving label (records kept in input order), the records are
/// shuffled with the seed derived from `"label:<label>"`; the first
/// `min(n, cap)` are kept and allocated to train/dev/test in that order.
/// Each split is then concatenated in label order and shuffled with the seed
/// derived from its own name.
pub fn preprocess(
    records: &[NameRecord],
    config: &PreprocessConfig,
) -> Result<SplitDataset, DatasetError> {
    config.validate()?;
    if records.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut by_label: BTreeMap<&str, Vec<&NameRecord>> = BTreeMap::new();
    for r in records {
        by_label.entry(r.nationality.as_str()).or_default().push(r);
    }
    let mut train = Vec::new();
    let mut dev = Vec::new();
    let mut test = Vec::new();
    for (label, mut group) in by_label {
        if group.len() < config.min_samples {
            continue;
        }
        SplitMix64::new(derive_seed(config.seed, &format!("label:{label}"))).shuffle(&mut group);
        group.truncate(config.cap);
        let (n_train, n_dev, _) = config.allocate(group.len());
        for (i, r) in group.into_iter().enumerate() {
            let bucket = if i < n_train {
                &mut train
            } else if i < n_train + n_dev {
                &mut dev
            } else {
                &mut test
            };
            bucket.push(r.clone());
        }
    }
    if train.is_empty() && dev.is_empty() && test.is_empty() {
        return Err(DatasetError::EmptyAfterFilter {
            min_samples: config.min_samples,
        });
    }
    for (tag, split) in [
        ("split:train", &mut train),
        ("split:dev", &mut dev),
        ("split:test", &mut test),
    ] {
        SplitMix64::new(derive_seed(config.seed, tag)).shuffle(split);
    }
    Ok(SplitDataset {
        train,
        dev,
        test,
        seed: config.seed,
        config: config.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_records: usize,
    pub per_label: BTreeMap<String, usize>,
    pub mean_length: f64,
    pub median_length: f64,
    /// Name length in characters (spaces included) -> record count.
    pub length_histogram: BTreeMap<usize, usize>,
}

pub fn corpus_stats(records: &[NameRecord]) -> CorpusStats {
    let mut lengths: Vec<usize> = records.iter().map(|r| r.name.chars().count()).collect();
    lengths.sort_unstable();
    let n = lengths.len();
    let mean_length = if n == 0 {
        0.0
    } else {
        lengths.iter().sum::<usize>() as f64 / n as f64
    };
    let median_length = match n {
        0 => 0.0,
        _ if n % 2 == 1 => lengths[n / 2] as f64,
        _ => (lengths[n / 2 - 1] + lengths[n / 2]) as f64 / 2.0,
    };
    let mut length_histogram = BTreeMap::new();
    for l in &lengths {
        *length_histogram.entry(*l).or_insert(0) += 1;
    }
    CorpusStats {
        n_records: n,
        per_label: raw_label_counts(records),
        mean_length,
        median_length,
        length_histogram,
    }
}
