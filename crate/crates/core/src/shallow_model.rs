//! fastText-style classifier: a name is the mean of its hashed character
//! n-gram embeddings, fed to a linear layer and a full softmax.
//!
//! The embedding table is conceptually `buckets × dim`, but with two
//! million buckets only rows that some training name touches are stored.
//! Every other row keeps its seeded initial value, which is recomputed on
//! demand, so the sparse table behaves exactly like the dense one.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::NameRecord;
use crate::features::{hash_ngrams, NgramConfig, HASH_FUNCTION_ID};
use crate::rng::{derive_seed, derive_seed_u64, SplitMix64};
use crate::taxonomy::LabelSpace;
use crate::{ModelError, ScoredLabel};

pub const SHALLOW_MODEL_MAGIC: &str = "natpred-shallow";
pub const SHALLOW_MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShallowConfig {
    pub ngram: NgramConfig,
    pub dim: usize,
    /// Initial learning rate, decayed linearly to zero over all updates.
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ShallowConfig {
    fn default() -> Self {
        Self {
            ngram: NgramConfig::hashed_default(),
            dim: 100,
            lr: 0.5,
            epochs: 25,
            seed: 0,
        }
    }
}

impl ShallowConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.ngram
            .validate()
            .map_err(|e| ModelError::Config(e.to_string()))?;
        if self.ngram.hashing_buckets.is_none() {
            return Err(ModelError::Config(
                "shallow model needs hashing_buckets".into(),
            ));
        }
        if self.dim == 0 {
            return Err(ModelError::Config("dim must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ModelError::Config(format!(
                "lr must be > 0, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    pub fn buckets(&self) -> u64 {
        self.ngram
            .hashing_buckets
            .unwrap_or(crate::features::DEFAULT_HASH_BUCKETS)
    }
}

/// A training or evaluation example: hashed gram buckets plus class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub buckets: Vec<u64>,
    pub class: usize,
}

/// Gradients of the mean cross-entropy over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Per touched bucket, `dim` entries.
    pub embeddings: HashMap<u64, Vec<f64>>,
    /// Row-major `classes × dim`.
    pub output: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShallowModel {
    pub labels: Vec<String>,
    pub config: ShallowConfig,
    pub hash_function: String,
    bucket_ids: Vec<u64>,
    /// Row `i` belongs to `bucket_ids[i]`.
    embeddings: Vec<f64>,
    /// Row-major `classes × dim`.
    output: Vec<f64>,
    bias: Vec<f64>,
    #[serde(skip)]
    row_of: HashMap<u64, usize>,
    pub dev_accuracy: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ShallowModelFile {
    magic: String,
    format_version: u32,
    model: ShallowModel,
}

impl ShallowModel {
    /// Freshly initialised parameters: embeddings uniform in `±1/dim`,
    /// output layer and bias zero.
    pub fn new(labels: &LabelSpace, config: ShallowConfig) -> Result<Self, ModelError> {
        config.validate()?;
        if labels.is_empty() {
            return Err(ModelError::Config("empty label space".into()));
        }
        let classes = labels.len();
        Ok(Self {
            labels: labels.labels().to_vec(),
            hash_function: HASH_FUNCTION_ID.into(),
            bucket_ids: Vec::new(),
            embeddings: Vec::new(),
            output: vec![0.0; classes * config.dim],
            bias: vec![0.0; classes],
            row_of: HashMap::new(),
            dev_accuracy: None,
            config,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn materialized_rows(&self) -> usize {
        self.bucket_ids.len()
    }

    fn initial_row(&self, bucket: u64) -> Vec<f64> {
        let bound = 1.0 / self.config.dim as f64;
        let mut rng = SplitMix64::new(derive_seed_u64(
            derive_seed(self.config.seed, "shallow:embedding"),
            bucket,
        ));
        (0..self.config.dim)
            .map(|_| rng.uniform(-bound, bound))
            .collect()
    }

    /// Current embedding of `bucket`, stored or initial.
    pub fn embedding(&self, bucket: u64) -> Vec<f64> {
        match self.row_of.get(&bucket) {
            Some(&r) => self.embeddings[r * self.config.dim..(r + 1) * self.config.dim].to_vec(),
            None => self.initial_row(bucket),
        }
    }

    fn row_index(&mut self, bucket: u64) -> usize {
        if let Some(&r) = self.row_of.get(&bucket) {
            return r;
        }
        let init = self.initial_row(bucket);
        let r = self.bucket_ids.len();
        self.bucket_ids.push(bucket);
        self.embeddings.extend(init);
        self.row_of.insert(bucket, r);
        r
    }

    pub fn embedding_mut(&mut self, bucket: u64) -> &mut [f64] {
        let dim = self.config.dim;
        let r = self.row_index(bucket);
        &mut self.embeddings[r * dim..(r + 1) * dim]
    }

    pub fn output_mut(&mut self) -> &mut [f64] {
        &mut self.output
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn encode(&self, name: &str) -> Vec<u64> {
        hash_ngrams(name, &self.config.ngram)
    }

    /// Mean gram embedding; `None` when the name has no grams.
    pub fn hidden(&self, buckets: &[u64]) -> Option<Vec<f64>> {
        if buckets.is_empty() {
            return None;
        }
        let dim = self.config.dim;
        let mut h = vec![0.0; dim];
        for &b in buckets {
            match self.row_of.get(&b) {
                Some(&r) => h
                    .iter_mut()
                    .zip(&self.embeddings[r * dim..(r + 1) * dim])
                    .for_each(|(a, e)| *a += e),
                None => h
                    .iter_mut()
                    .zip(self.initial_row(b))
                    .for_each(|(a, e)| *a += e),
            }
        }
        let inv = 1.0 / buckets.len() as f64;
        h.iter_mut().for_each(|v| *v *= inv);
        Some(h)
    }

    pub fn logits(&self, hidden: &[f64]) -> Vec<f64> {
        let dim = self.config.dim;
        self.bias
            .iter()
            .enumerate()
            .map(|(c, b)| {
                b + self.output[c * dim..(c + 1) * dim]
                    .iter()
                    .zip(hidden)
                    .map(|(w, h)| w * h)
                    .sum::<f64>()
            })
            .collect()
    }

    pub fn probabilities_for(&self, buckets: &[u64]) -> Vec<f64> {
        match self.hidden(buckets) {
            Some(h) => softmax(&self.logits(&h)),
            None => vec![1.0 / self.n_classes() as f64; self.n_classes()],
        }
    }

    pub fn probabilities(&self, name: &str) -> Vec<f64> {
        self.probabilities_for(&self.encode(name))
    }

    pub fn predict_topk(&self, name: &str, k: usize) -> Vec<ScoredLabel> {
        crate::rank_top_k(&self.labels, &self.probabilities(name), k)
    }

    /// Mean cross-entropy over `batch`. Gram-less examples contribute `ln C`.
    pub fn loss(&self, batch: &[Example]) -> f64 {
        let total: f64 = batch
            .iter()
            .map(|ex| -self.probabilities_for(&ex.buckets)[ex.class].ln())
            .sum();
        total / batch.len() as f64
    }

    /// Analytic gradients of [`ShallowModel::loss`].
    pub fn gradients(&self, batch: &[Example]) -> Gradients {
        let dim = self.config.dim;
        let classes = self.n_classes();
        let scale = 1.0 / batch.len() as f64;
        let mut grads = Gradients {
            embeddings: HashMap::new(),
            output: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
        };
        for ex in batch {
            let Some(h) = self.hidden(&ex.buckets) else {
                continue;
            };
            let mut g = softmax(&self.logits(&h));
            g[ex.class] -= 1.0;
            let mut dh = vec![0.0; dim];
            for c in 0..classes {
                let gc = g[c] * scale;
                grads.bias[c] += gc;
                let w = &self.output[c * dim..(c + 1) * dim];
                let gw = &mut grads.output[c * dim..(c + 1) * dim];
                for j in 0..dim {
                    gw[j] += gc * h[j];
                    dh[j] += gc * w[j];
                }
            }
            let share = 1.0 / ex.buckets.len() as f64;
            for &b in &ex.buckets {
                let row = grads.embeddings.entry(b).or_insert_with(|| vec![0.0; dim]);
                row.iter_mut().zip(&dh).for_each(|(r, d)| *r += d * share);
            }
        }
        grads
    }

    /// One SGD update on a single example; returns its loss before the step.
    fn sgd_step(
        &mut self,
        rows: &[usize],
        class: usize,
        lr: f64,
        h: &mut [f64],
        dh: &mut [f64],
        g: &mut [f64],
    ) -> f64 {
        let dim = self.config.dim;
        let classes = self.n_classes();
        h.iter_mut().for_each(|v| *v = 0.0);
        for &r in rows {
            h.iter_mut()
                .zip(&self.embeddings[r * dim..(r + 1) * dim])
                .for_each(|(a, e)| *a += e);
        }
        let inv = 1.0 / rows.len() as f64;
        h.iter_mut().for_each(|v| *v *= inv);
        for c in 0..classes {
            g[c] = self.bias[c]
                + self.output[c * dim..(c + 1) * dim]
                    .iter()
                    .zip(h.iter())
                    .map(|(w, x)| w * x)
                    .sum::<f64>();
        }
        softmax_in_place(g);
        let loss = -g[class].ln();
        g[class] -= 1.0;
        dh.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..classes {
            let gc = g[c];
            if gc == 0.0 {
                continue;
            }
            self.bias[c] -= lr * gc;
            let w = &mut self.output[c * dim..(c + 1) * dim];
            for j in 0..dim {
                dh[j] += gc * w[j];
                w[j] -= lr * gc * h[j];
            }
        }
        let step = lr * inv;
        for &r in rows {
            self.embeddings[r * dim..(r + 1) * dim]
                .iter_mut()
                .zip(dh.iter())
                .for_each(|(e, d)| *e -= step * d);
        }
        loss
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let file = ShallowModelFile {
            magic: SHALLOW_MODEL_MAGIC.into(),
            format_version: SHALLOW_MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        let writer = std::io::BufWriter::new(std::fs::File::create(path)?);
        bincode::serialize_into(writer, &file)?;
        Ok(())
    }

    /// Loads a model and checks it was built with `expected_buckets` and
    /// the same gram hash as this build.
    pub fn load(path: impl AsRef<Path>, expected_buckets: Option<u64>) -> Result<Self, ModelError> {
        let reader = std::io::BufReader::new(std::fs::File::open(path)?);
        let file: ShallowModelFile = bincode::deserialize_from(reader)?;
        if file.magic != SHALLOW_MODEL_MAGIC {
            return Err(ModelError::WrongKind {
                expected: SHALLOW_MODEL_MAGIC,
                found: file.magic,
            });
        }
        if file.format_version != SHALLOW_MODEL_FORMAT_VERSION {
            return Err(ModelError::Version(file.format_version));
        }
        let mut model = file.model;
        if model.hash_function != HASH_FUNCTION_ID {
            return Err(ModelError::Incompatible(format!(
                "hash function `{}`, expected `{HASH_FUNCTION_ID}`",
                model.hash_function
            )));
        }
        if let Some(expected) = expected_buckets {
            if model.config.buckets() != expected {
                return Err(ModelError::Incompatible(format!(
                    "model uses {} buckets, expected {expected}",
                    model.config.buckets()
                )));
            }
        }
        let dim = model.config.dim;
        if model.embeddings.len() != model.bucket_ids.len() * dim
            || model.output.len() != model.labels.len() * dim
            || model.bias.len() != model.labels.len()
        {
            return Err(ModelError::Incompatible(
                "parameter shapes do not match header".into(),
            ));
        }
        model.row_of = model
            .bucket_ids
            .iter()
            .enumerate()
            .map(|(i, b)| (*b, i))
            .collect();
        Ok(model)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    values.iter_mut().for_each(|v| *v /= sum);
}

pub fn encode_records(
    records: &[NameRecord],
    labels: &LabelSpace,
    config: &NgramConfig,
) -> Result<Vec<Example>, ModelError> {
    records
        .iter()
        .map(|r| {
            let class = labels.index_of(&r.nationality).ok_or_else(|| {
                ModelError::DimensionMismatch(format!(
                    "label `{}` not in label space",
                    r.nationality
                ))
            })?;
            Ok(Example {
                buckets: hash_ngrams(&r.name, config),
                class,
            })
        })
        .collect()
}

/// Trains with batch-size-one SGD over a seeded shuffle per epoch. The dev
/// split only provides a reported accuracy.
pub fn train(
    train: &[NameRecord],
    dev: &[NameRecord],
    labels: &LabelSpace,
    config: &ShallowConfig,
) -> Result<ShallowModel, ModelError> {
    config.validate()?;
    if train.is_empty() {
        return Err(ModelError::Empty);
    }
    let examples = encode_records(train, labels, &config.ngram)?;
    let mut seen = vec![false; labels.len()];
    examples.iter().for_each(|e| seen[e.class] = true);
    if seen.iter().filter(|s| **s).count() < 2 {
        return Err(ModelError::SingleClass);
    }
    let mut model = ShallowModel::new(labels, config.clone())?;

    let mut distinct: Vec<u64> = examples
        .iter()
        .flat_map(|e| e.buckets.iter().copied())
        .collect();
    distinct.sort_unstable();
    distinct.dedup();
    for b in distinct {
        model.row_index(b);
    }
    let rows: Vec<Vec<usize>> = examples
        .iter()
        .map(|e| e.buckets.iter().map(|b| model.row_of[b]).collect())
        .collect();

    let dim = config.dim;
    let (mut h, mut dh, mut g) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; labels.len()]);
    let total_steps = (config.epochs * examples.len()) as f64;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let order_seed = derive_seed(config.seed, "shallow:order");
    for epoch in 0..config.epochs {
        order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
        SplitMix64::new(derive_seed_u64(order_seed, epoch as u64)).shuffle(&mut order);
        for &i in &order {
            let lr = config.lr * (1.0 - step as f64 / total_steps);
            step += 1;
            if rows[i].is_empty() {
                continue;
            }
            model.sgd_step(&rows[i], examples[i].class, lr, &mut h, &mut dh, &mut g);
        }
    }

    if !dev.is_empty() {
        let dev_examples = encode_records(dev, labels, &config.ngram)?;
        let correct = dev_examples
            .iter()
            .filter(|e| {
                let p = model.probabilities_for(&e.buckets);
                crate::rank_top_k(&model.labels, &p, 1)[0].label == model.labels[e.class]
            })
            .count();
        model.dev_accuracy = Some(correct as f64 / dev_examples.len() as f64);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::Granularity;

    fn small_config() -> ShallowConfig {
        ShallowConfig {
            ngram: NgramConfig {
                hashing_buckets: Some(1 << 12),
                ..NgramConfig::hashed_default()
            },
            dim: 8,
            lr: 0.5,
            epochs: 25,
            seed: 1,
        }
    }

    #[test]
    fn disjoint_grams_are_separated() {
        let labels = LabelSpace::new(["x", "y"], Granularity::Nationality);
        let train_set: Vec<NameRecord> = [
            "aaaa", "aaab", "aaba", "abaa", "zzzz", "zzzy", "zzyz", "zyzz",
        ]
        .iter()
        .enumerate()
        .map(|(i, n)| NameRecord::new(*n, if i < 4 { "x" } else { "y" }))
        .collect();
        let model = train(&train_set, &train_set, &labels, &small_config()).unwrap();
        assert_eq!(model.dev_accuracy, Some(1.0));
    }

    #[test]
    fn gramless_name_gets_uniform_distribution() {
        let labels = LabelSpace::new(["b", "a", "c"], Granularity::Nationality);
        let model = ShallowModel::new(&labels, small_config()).unwrap();
        let top = model.predict_topk("q", 3);
        assert!(top.iter().all(|s| (s.score - 1.0 / 3.0).abs() < 1e-15));
        let got: Vec<&str> = top.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(got, ["a", "b", "c"]);
    }

    #[test]
    fn sparse_rows_match_initial_values() {
        let labels = LabelSpace::new(["a", "b"], Granularity::Nationality);
        let mut model = ShallowModel::new(&labels, small_config()).unwrap();
        let before = model.embedding(17);
        assert_eq!(model.embedding_mut(17).to_vec(), before);
        assert!(before.iter().all(|v| v.abs() <= 1.0 / 8.0));
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[1.0, 2.0, -3.0]);
        let b = softmax(&[101.0, 102.0, 97.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let labels = LabelSpace::new(["a", "b"], Granularity::Nationality);
        let recs = vec![NameRecord::new("abc", "a")];
        assert!(matches!(
            train(&recs, &[], &labels, &small_config()),
            Err(ModelError::SingleClass)
        ));
    }

    #[test]
    fn load_checks_buckets() {
        let dir = tempfile::tempdir().unwrap();
        let labels = LabelSpace::new(["a", "b"], Granularity::Nationality);
        let recs = vec![NameRecord::new("abc", "a"), NameRecord::new("xyz", "b")];
        let model = train(&recs, &[], &labels, &small_config()).unwrap();
        let path = dir.path().join("m.bin");
        model.save(&path).unwrap();
        let loaded = ShallowModel::load(&path, Some(1 << 12)).unwrap();
        assert_eq!(loaded.probabilities("abz"), model.probabilities("abz"));
        assert!(matches!(
            ShallowModel::load(&path, Some(1 << 20)),
            Err(ModelError::Incompatible(_))
        ));
    }
}
