//! Character n-gram features.
//!
//! Two featurisations share the same gram extraction: a TF-IDF vocabulary
//! for the linear model and FNV-1a hashed bucket ids for the shallow model.
//! Grams are contiguous substrings of the (optionally lowercased) name,
//! spaces included, with no boundary padding.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const VOCABULARY_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_HASH_BUCKETS: u64 = 2_097_152;
pub const HASH_FUNCTION_ID: &str = "fnv1a64";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid n-gram config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyCorpus,
    #[error(
        "vocabulary format version {found} is not supported (expected {VOCABULARY_FORMAT_VERSION})"
    )]
    Version { found: u32 },
    #[error("vocabulary fingerprint mismatch: file says {stored}, contents hash to {computed}")]
    Fingerprint { stored: String, computed: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub max_features: usize,
    pub lowercase: bool,
    pub hashing_buckets: Option<u64>,
}

impl NgramConfig {
    /// Character 1-4 grams, 50,000 features.
    pub fn tfidf_default() -> Self {
        Self {
            n_min: 1,
            n_max: 4,
            max_features: 50_000,
            lowercase: true,
            hashing_buckets: None,
        }
    }

    /// Character 2-5 grams hashed into 2^21 buckets.
    pub fn hashed_default() -> Self {
        Self {
            n_min: 2,
            n_max: 5,
            max_features: 1,
            lowercase: true,
            hashing_buckets: Some(DEFAULT_HASH_BUCKETS),
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.n_min < 1 || self.n_min > self.n_max || self.n_max > 8 {
            return Err(FeatureError::InvalidConfig(format!(
                "need 1 <= n_min <= n_max <= 8, got {}..{}",
                self.n_min, self.n_max
            )));
        }
        match self.hashing_buckets {
            Some(0) => Err(FeatureError::InvalidConfig(
                "hashing_buckets must be >= 1".into(),
            )),
            None if self.max_features == 0 => Err(FeatureError::InvalidConfig(
                "max_features must be >= 1".into(),
            )),
            _ => Ok(()),
        }
    }

    fn prepare(&self, name: &str) -> Vec<char> {
        if self.lowercase {
            name.to_lowercase().chars().collect()
        } else {
            name.chars().collect()
        }
    }
}

/// All contiguous grams of lengths `n_min..=n_max`, shortest first, with
/// repeats kept.
pub fn extract_ngrams(name: &str, config: &NgramConfig) -> Vec<String> {
    let chars = config.prepare(name);
    let mut grams = Vec::new();
    for n in config.n_min..=config.n_max {
        if n > chars.len() {
            break;
        }
        grams.extend(chars.windows(n).map(|w| w.iter().collect::<String>()));
    }
    grams
}

/// Bucket ids of every gram (duplicates kept), via FNV-1a 64 over UTF-8 bytes.
pub fn hash_ngrams(name: &str, config: &NgramConfig) -> Vec<u64> {
    let buckets = config.hashing_buckets.unwrap_or(DEFAULT_HASH_BUCKETS);
    extract_ngrams(name, config)
        .iter()
        .map(|g| fnv1a64(g.as_bytes()) % buckets)
        .collect()
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_zero(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| dense[i as usize] * v)
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }
}

/// Fitted TF-IDF vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub format_version: u32,
    pub config: NgramConfig,
    /// Selected grams in ascending order; a gram's position is its feature index.
    pub grams: Vec<String>,
    pub idf: Vec<f64>,
    pub n_documents: usize,
    pub fingerprint: String,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn index_of(&self, gram: &str) -> Option<u32> {
        self.index.get(gram).copied()
    }

    fn build_index(&mut self) {
        self.index = self
            .grams
            .iter()
            .enumerate()
            .map(|(i, g)| (g.clone(), i as u32))
            .collect();
    }

    fn compute_fingerprint(config: &NgramConfig, grams: &[String], idf: &[f64]) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(config).expect("config serialises"));
        for (g, w) in grams.iter().zip(idf) {
            hasher.update(g.as_bytes());
            hasher.update([0u8]);
            hasher.update(w.to_bits().to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("vocabulary serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, FeatureError> {
        let mut vocab: Vocabulary = serde_json::from_str(text)?;
        if vocab.format_version != VOCABULARY_FORMAT_VERSION {
            return Err(FeatureError::Version {
                found: vocab.format_version,
            });
        }
        let computed = Self::compute_fingerprint(&vocab.config, &vocab.grams, &vocab.idf);
        if computed != vocab.fingerprint {
            return Err(FeatureError::Fingerprint {
                stored: vocab.fingerprint,
                computed,
            });
        }
        vocab.build_index();
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), FeatureError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, FeatureError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Keeps the `max_features` grams with the highest document frequency
/// (ties by gram, ascending) and computes smoothed IDF
/// `ln((1 + N) / (1 + df)) + 1`.
pub fn fit_vocabulary<S: AsRef<str>>(
    names: &[S],
    config: &NgramConfig,
) -> Result<Vocabulary, FeatureError> {
    config.validate()?;
    if names.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let mut df: HashMap<String, u32> = HashMap::new();
    for name in names {
        let mut grams = extract_ngrams(name.as_ref(), config);
        grams.sort_unstable();
        grams.dedup();
        for g in grams {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, u32)> = df.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(config.max_features);
    ranked.sort_unstable_by(|a, b| a.0.cmp(&b.0));

    let n = names.len() as f64;
    let idf: Vec<f64> = ranked
        .iter()
        .map(|(_, d)| ((1.0 + n) / (1.0 + f64::from(*d))).ln() + 1.0)
        .collect();
    let grams: Vec<String> = ranked.into_iter().map(|(g, _)| g).collect();
    let fingerprint = Vocabulary::compute_fingerprint(config, &grams, &idf);
    let mut vocab = Vocabulary {
        format_version: VOCABULARY_FORMAT_VERSION,
        config: config.clone(),
        grams,
        idf,
        n_documents: names.len(),
        fingerprint,
        index: HashMap::new(),
    };
    vocab.build_index();
    Ok(vocab)
}

/// Raw term frequency times IDF, L2-normalised. Out-of-vocabulary grams are
/// dropped; a name with no known grams maps to the zero vector.
pub fn transform(name: &str, vocab: &Vocabulary) -> SparseVector {
    let mut counts: Vec<(u32, u32)> = Vec::new();
    let mut ids: Vec<u32> = extract_ngrams(name, &vocab.config)
        .iter()
        .filter_map(|g| vocab.index_of(g))
        .collect();
    ids.sort_unstable();
    for id in ids {
        match counts.last_mut() {
            Some((last, c)) if *last == id => *c += 1,
            _ => counts.push((id, 1)),
        }
    }
    let mut values: Vec<f64> = counts
        .iter()
        .map(|&(i, c)| f64::from(c) * vocab.idf[i as usize])
        .collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    SparseVector {
        indices: counts.into_iter().map(|(i, _)| i).collect(),
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n_min: usize, n_max: usize) -> NgramConfig {
        NgramConfig {
            n_min,
            n_max,
            max_features: 100,
            lowercase: true,
            hashing_buckets: None,
        }
    }

    #[test]
    fn fnv1a64_published_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
        assert_eq!(fnv1a64("ab".as_bytes()), 0x089c4407b545986a);
        assert_eq!(fnv1a64("ş".as_bytes()), 0x0aada907b706ba0d);
    }

    #[test]
    fn small_gram_sets() {
        assert_eq!(extract_ngrams("ab", &cfg(1, 2)), vec!["a", "b", "ab"]);
        assert_eq!(extract_ngrams("Lee", &cfg(1, 1)), vec!["l", "e", "e"]);
        assert_eq!(extract_ngrams("abcd", &cfg(1, 4)).len(), 10);
        assert_eq!(extract_ngrams("a b", &cfg(2, 2)), vec!["a ", " b"]);
        assert!(extract_ngrams("ab", &cfg(3, 4)).is_empty());
    }

    #[test]
    fn diacritics_survive_lowercasing() {
        let grams = extract_ngrams("Șchiopu", &cfg(1, 1));
        assert_eq!(grams[0], "ș");
    }

    #[test]
    fn idf_of_universal_gram_is_one() {
        let vocab = fit_vocabulary(&["ab", "ba", "aa"], &cfg(1, 1)).unwrap();
        let i = vocab.index_of("a").unwrap() as usize;
        assert!((vocab.idf[i] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn max_features_keeps_highest_df() {
        let mut c = cfg(2, 2);
        c.max_features = 1;
        let vocab = fit_vocabulary(&["ab", "ab", "cd"], &c).unwrap();
        assert_eq!(vocab.grams, vec!["ab"]);
    }

    #[test]
    fn transform_edge_cases() {
        let vocab = fit_vocabulary(&["ab"], &cfg(2, 2)).unwrap();
        assert!(transform("xyz", &vocab).is_zero());
        let v = transform("ab", &vocab);
        assert_eq!(v.indices, vec![0]);
        assert!((v.values[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hashing_edge_cases() {
        let mut c = NgramConfig::hashed_default();
        assert_eq!(
            hash_ngrams("Kyubyong Park", &c),
            hash_ngrams("Kyubyong Park", &c)
        );
        c.hashing_buckets = Some(1);
        assert!(hash_ngrams("Kyubyong Park", &c).iter().all(|b| *b == 0));
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0, 2).validate().is_err());
        assert!(cfg(3, 2).validate().is_err());
        assert!(cfg(1, 9).validate().is_err());
        let mut c = cfg(1, 2);
        c.max_features = 0;
        assert!(c.validate().is_err());
        assert!(NgramConfig::hashed_default().validate().is_ok());
    }

    #[test]
    fn vocabulary_json_round_trip_and_tamper_check() {
        let vocab = fit_vocabulary(&["anna", "bob"], &cfg(1, 2)).unwrap();
        let json = vocab.to_json();
        let back = Vocabulary::from_json(&json).unwrap();
        assert_eq!(back.grams, vocab.grams);
        assert_eq!(back.index_of("an"), vocab.index_of("an"));
        let tampered = json.replace("\"an\"", "\"zz\"");
        assert!(matches!(
            Vocabulary::from_json(&tampered),
            Err(FeatureError::Fingerprint { .. })
        ));
    }
}
