//! One-vs-rest linear SVM over TF-IDF vectors with Platt-calibrated
//! probabilities.
//!
//! Each class solves `min ½‖w‖² + C Σ max(0, 1 − yᵢ(⟨w, xᵢ⟩ + b))` by SGD
//! with step `ηₜ = 1 / (λ (t + t₀))`, `λ = 1 / (C N)`. The weight vector is
//! stored as `scale · v` so the shrink step is O(1) and an update touches
//! only the non-zeros of `xᵢ`. The bias is not regularised.
//!
//! Calibration fits `P(c | x) = σ(a_c m_c + b_c)` per class on dev-set
//! margins (Platt's prior-smoothed targets, Newton with backtracking), then
//! normalises across classes.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{SparseVector, Vocabulary};
use crate::rng::{derive_seed, derive_seed_u64, SplitMix64};
use crate::taxonomy::LabelSpace;
use crate::{ModelError, ScoredLabel};

pub const LINEAR_MODEL_MAGIC: &str = "natpred-linear-svm";
pub const LINEAR_MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearTrainConfig {
    /// Hinge-loss trade-off `C`.
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Stop early once the relative objective change between epochs falls below this.
    pub tolerance: f64,
    /// Step-size offset `t₀`; `None` means the number of training examples.
    pub t0: Option<f64>,
}

impl Default for LinearTrainConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            epochs: 10,
            seed: 0,
            tolerance: 1e-4,
            t0: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattParams {
    pub a: f64,
    pub b: f64,
}

impl PlattParams {
    pub fn probability(&self, margin: f64) -> f64 {
        sigmoid(self.a * margin + self.b)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub labels: Vec<String>,
    pub n_features: usize,
    pub vocab_fingerprint: String,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub platt: Vec<PlattParams>,
    pub config: LinearTrainConfig,
    /// `λ = 1 / (C N)` actually used.
    pub lambda: f64,
    pub epochs_run: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct LinearModelFile {
    magic: String,
    format_version: u32,
    model: LinearModel,
}

/// Regularised hinge objective `½‖w‖² + C Σ max(0, 1 − y(⟨w,x⟩ + b))`.
pub fn hinge_objective(w: &[f64], b: f64, xs: &[SparseVector], ys: &[f64], c: f64) -> f64 {
    let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let loss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (1.0 - y * (x.dot(w) + b)).max(0.0))
        .sum();
    reg + c * loss
}

/// Subgradient of [`hinge_objective`] with respect to `(w, b)`; at the kink
/// (`y m = 1`) the zero subgradient is taken for that example.
pub fn hinge_subgradient(
    w: &[f64],
    b: f64,
    xs: &[SparseVector],
    ys: &[f64],
    c: f64,
) -> (Vec<f64>, f64) {
    let mut gw = w.to_vec();
    let mut gb = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        if y * (x.dot(w) + b) < 1.0 {
            for (i, v) in x.iter() {
                gw[i] -= c * y * v;
            }
            gb -= c * y;
        }
    }
    (gw, gb)
}

struct BinaryProblem<'a> {
    xs: &'a [SparseVector],
    ys: Vec<f64>,
}

fn train_binary(
    problem: &BinaryProblem<'_>,
    n_features: usize,
    lambda: f64,
    t0: f64,
    cfg: &LinearTrainConfig,
) -> (Vec<f64>, f64, usize) {
    let n = problem.xs.len();
    let mut v = vec![0.0; n_features];
    let mut scale = 1.0f64;
    let mut bias = 0.0;
    let mut t = 0.0f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut prev_obj = f64::INFINITY;
    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        // one shared order per epoch; every class sees the same sequence
        order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
        SplitMix64::new(derive_seed_u64(
            derive_seed(cfg.seed, "svm:order"),
            epoch as u64,
        ))
        .shuffle(&mut order);
        for &i in &order {
            let x = &problem.xs[i];
            let y = problem.ys[i];
            let eta = 1.0 / (lambda * (t + t0));
            let margin = y * (scale * x.dot(&v) + bias);
            scale *= 1.0 - eta * lambda;
            if margin < 1.0 {
                let step = eta * y / scale;
                for (j, xv) in x.iter() {
                    v[j] += step * xv;
                }
                bias += eta * y;
            }
            if scale < 1e-9 {
                v.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
            t += 1.0;
        }
        epochs_run = epoch + 1;
        let w: Vec<f64> = v.iter().map(|x| x * scale).collect();
        let obj = hinge_objective(&w, bias, problem.xs, &problem.ys, cfg.c);
        if (prev_obj - obj).abs() <= cfg.tolerance * obj.abs().max(1e-12) {
            break;
        }
        prev_obj = obj;
    }
    v.iter_mut().for_each(|w| *w *= scale);
    (v, bias, epochs_run)
}

/// Platt sigmoid fit by Newton's method with backtracking line search on
/// the cross-entropy against prior-smoothed targets
/// `(N₊ + 1) / (N₊ + 2)` and `1 / (N₋ + 2)`.
pub fn fit_platt(margins: &[f64], positive: &[bool]) -> PlattParams {
    let n_pos = positive.iter().filter(|p| **p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = positive.iter().map(|p| if *p { hi } else { lo }).collect();

    // Work in the `1 / (1 + exp(A m + B))` parameterisation; (a, b) = (−A, −B).
    let objective = |a: f64, b: f64| -> f64 {
        margins
            .iter()
            .zip(&targets)
            .map(|(m, t)| {
                let f = m * a + b;
                if f >= 0.0 {
                    t * f + (1.0 + (-f).exp()).ln()
                } else {
                    (t - 1.0) * f + (1.0 + f.exp()).ln()
                }
            })
            .sum()
    };
    let mut a = 0.0;
    let mut b = ((n_neg + 1.0) / (n_pos + 1.0)).ln();
    let mut fval = objective(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (m, t) in margins.iter().zip(&targets) {
            let f = m * a + b;
            let (p, q) = if f >= 0.0 {
                let e = (-f).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = f.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += m * m * d2;
            h22 += d2;
            h21 += m * d2;
            let d1 = t - p;
            g1 += m * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    PlattParams { a: -a, b: -b }
}

/// Trains one binary SVM per class, then calibrates each on the dev split.
pub fn train(
    train_x: &[SparseVector],
    train_y: &[usize],
    dev_x: &[SparseVector],
    dev_y: &[usize],
    labels: &LabelSpace,
    vocab: &Vocabulary,
    config: &LinearTrainConfig,
) -> Result<LinearModel, ModelError> {
    if config.c <= 0.0 || !config.c.is_finite() {
        return Err(ModelError::Config(format!(
            "C must be > 0, got {}",
            config.c
        )));
    }
    if train_x.is_empty() {
        return Err(ModelError::Empty);
    }
    if train_x.len() != train_y.len() || dev_x.len() != dev_y.len() {
        return Err(ModelError::DimensionMismatch(
            "feature and label counts differ".into(),
        ));
    }
    let n_features = vocab.len();
    let n_classes = labels.len();
    for x in train_x.iter().chain(dev_x) {
        if x.indices.last().is_some_and(|&i| i as usize >= n_features) {
            return Err(ModelError::DimensionMismatch(format!(
                "feature index beyond vocabulary size {n_features}"
            )));
        }
    }
    if let Some(&bad) = train_y.iter().chain(dev_y).find(|&&y| y >= n_classes) {
        return Err(ModelError::DimensionMismatch(format!(
            "label index {bad} outside {n_classes} classes"
        )));
    }
    let mut present = vec![false; n_classes];
    train_y.iter().for_each(|&y| present[y] = true);
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(ModelError::SingleClass);
    }

    let lambda = 1.0 / (config.c * train_x.len() as f64);
    let t0 = config.t0.unwrap_or(train_x.len() as f64);
    let trained: Vec<(Vec<f64>, f64, usize, PlattParams)> = (0..n_classes)
        .into_par_iter()
        .map(|class| {
            let problem = BinaryProblem {
                xs: train_x,
                ys: train_y
                    .iter()
                    .map(|&y| if y == class { 1.0 } else { -1.0 })
                    .collect(),
            };
            let (w, b, epochs) = train_binary(&problem, n_features, lambda, t0, config);
            let margins: Vec<f64> = dev_x.iter().map(|x| x.dot(&w) + b).collect();
            let positive: Vec<bool> = dev_y.iter().map(|&y| y == class).collect();
            let platt = if dev_x.is_empty() {
                PlattParams { a: 1.0, b: 0.0 }
            } else {
                fit_platt(&margins, &positive)
            };
            (w, b, epochs, platt)
        })
        .collect();

    let mut model = LinearModel {
        labels: labels.labels().to_vec(),
        n_features,
        vocab_fingerprint: vocab.fingerprint.clone(),
        weights: Vec::with_capacity(n_classes),
        biases: Vec::with_capacity(n_classes),
        platt: Vec::with_capacity(n_classes),
        config: config.clone(),
        lambda,
        epochs_run: Vec::with_capacity(n_classes),
    };
    for (w, b, e, p) in trained {
        model.weights.push(w);
        model.biases.push(b);
        model.epochs_run.push(e);
        model.platt.push(p);
    }
    Ok(model)
}

impl LinearModel {
    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn margins(&self, x: &SparseVector) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| x.dot(w) + b)
            .collect()
    }

    /// Calibrated per-class probabilities, normalised to sum to one.
    pub fn probabilities(&self, x: &SparseVector) -> Vec<f64> {
        let raw: Vec<f64> = self
            .margins(x)
            .iter()
            .zip(&self.platt)
            .map(|(m, p)| p.probability(*m))
            .collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 && total.is_finite() {
            raw.iter().map(|p| p / total).collect()
        } else {
            vec![1.0 / raw.len() as f64; raw.len()]
        }
    }

    pub fn predict_topk(&self, x: &SparseVector, k: usize) -> Vec<ScoredLabel> {
        crate::rank_top_k(&self.labels, &self.probabilities(x), k)
    }

    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<(), ModelError> {
        if vocab.fingerprint != self.vocab_fingerprint || vocab.len() != self.n_features {
            return Err(ModelError::FingerprintMismatch {
                expected: self.vocab_fingerprint.clone(),
                found: vocab.fingerprint.clone(),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let file = LinearModelFile {
            magic: LINEAR_MODEL_MAGIC.into(),
            format_version: LINEAR_MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        let writer = std::io::BufWriter::new(std::fs::File::create(path)?);
        bincode::serialize_into(writer, &file)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let reader = std::io::BufReader::new(std::fs::File::open(path)?);
        let file: LinearModelFile = bincode::deserialize_from(reader)?;
        if file.magic != LINEAR_MODEL_MAGIC {
            return Err(ModelError::WrongKind {
                expected: LINEAR_MODEL_MAGIC,
                found: file.magic,
            });
        }
        if file.format_version != LINEAR_MODEL_FORMAT_VERSION {
            return Err(ModelError::Version(file.format_version));
        }
        Ok(file.model)
    }
}
