//! Metrics and error analyses over ranked prediction sets.
//!
//! A prediction with an empty ranked list (or the `unknown` flag) is an
//! Unknown: it is wrong for accuracy and P@k, and for Macro-F1 it only adds
//! a false negative to its true class.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{
    FrequencyBin, FrequencyBins, Granularity, LabelSpace, Taxonomy, TaxonomyError,
};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction set is empty")]
    EmptySet,
    #[error("k must be >= 1")]
    InvalidK,
    #[error("label `{0}` is not in the evaluation label space")]
    UnknownLabel(String),
    #[error("prediction sets cover different names: {0}")]
    NameSetMismatch(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    Json {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionFlags {
    #[serde(default)]
    pub unknown: bool,
    #[serde(default)]
    pub parse_error: bool,
    #[serde(default)]
    pub retries_used: u32,
}

/// One line of a prediction dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub name: String,
    pub true_label: String,
    /// Ranked labels, most confident first.
    pub predicted: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    /// Source id: a model name or an LLM strategy.
    pub strategy: String,
    #[serde(default)]
    pub flags: PredictionFlags,
}

impl Prediction {
    pub fn new(
        name: impl Into<String>,
        true_label: impl Into<String>,
        predicted: Vec<String>,
        strategy: impl Into<String>,
    ) -> Self {
        let predicted: Vec<String> = predicted;
        let unknown = predicted.is_empty();
        Self {
            name: name.into(),
            true_label: true_label.into(),
            predicted,
            scores: None,
            strategy: strategy.into(),
            flags: PredictionFlags {
                unknown,
                ..Default::default()
            },
        }
    }

    pub fn is_unknown(&self) -> bool {
        self.flags.unknown || self.predicted.is_empty()
    }

    pub fn top1(&self) -> Option<&str> {
        if self.flags.unknown {
            return None;
        }
        self.predicted.first().map(String::as_str)
    }

    pub fn is_correct(&self) -> bool {
        self.top1() == Some(self.true_label.as_str())
    }

    pub fn hit_at(&self, k: usize) -> bool {
        !self.flags.unknown && self.predicted.iter().take(k).any(|p| *p == self.true_label)
    }
}

pub fn to_jsonl(predictions: &[Prediction]) -> String {
    let mut out = String::new();
    for p in predictions {
        out.push_str(&serde_json::to_string(p).expect("prediction serialises"));
        out.push('\n');
    }
    out
}

pub fn write_dump(path: impl AsRef<Path>, predictions: &[Prediction]) -> Result<(), EvalError> {
    let path = path.as_ref();
    let io = |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    file.write_all(to_jsonl(predictions).as_bytes())
        .map_err(io)?;
    file.flush().map_err(io)
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<Vec<Prediction>, EvalError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| EvalError::Io {
            path: shown.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let p = serde_json::from_str(&line).map_err(|source| EvalError::Json {
            path: shown.clone(),
            line: i + 1,
            source,
        })?;
        out.push(p);
    }
    Ok(out)
}

fn non_empty(predictions: &[Prediction]) -> Result<(), EvalError> {
    if predictions.is_empty() {
        Err(EvalError::EmptySet)
    } else {
        Ok(())
    }
}

pub fn accuracy(predictions: &[Prediction]) -> Result<f64, EvalError> {
    non_empty(predictions)?;
    Ok(predictions.iter().filter(|p| p.is_correct()).count() as f64 / predictions.len() as f64)
}

pub fn precision_at_k(predictions: &[Prediction], k: usize) -> Result<f64, EvalError> {
    non_empty(predictions)?;
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    Ok(predictions.iter().filter(|p| p.hit_at(k)).count() as f64 / predictions.len() as f64)
}

pub fn unknown_rate(predictions: &[Prediction]) -> Result<f64, EvalError> {
    non_empty(predictions)?;
    Ok(predictions.iter().filter(|p| p.is_unknown()).count() as f64 / predictions.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassStats {
    pub class: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PerClassStats {
    fn from_counts(class: String, tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            class,
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

/// Top-1 tp/fp/fn for every class of `labels`, in label order.
pub fn per_class_stats(
    predictions: &[Prediction],
    labels: &LabelSpace,
) -> Result<Vec<PerClassStats>, EvalError> {
    let n = labels.len();
    let (mut tp, mut fp, mut fn_) = (vec![0usize; n], vec![0usize; n], vec![0usize; n]);
    let index = |l: &str| {
        labels
            .index_of(l)
            .ok_or_else(|| EvalError::UnknownLabel(l.to_string()))
    };
    for p in predictions {
        let t = index(&p.true_label)?;
        match p.top1() {
            Some(pred) => {
                let q = index(pred)?;
                if q == t {
                    tp[t] += 1;
                } else {
                    fp[q] += 1;
                    fn_[t] += 1;
                }
            }
            None => fn_[t] += 1,
        }
    }
    Ok((0..n)
        .map(|i| PerClassStats::from_counts(labels.label(i).to_string(), tp[i], fp[i], fn_[i]))
        .collect())
}

/// Mean per-class F1 over the whole label space; classes absent from the
/// sample count as zero.
pub fn macro_f1(predictions: &[Prediction], labels: &LabelSpace) -> Result<f64, EvalError> {
    non_empty(predictions)?;
    let stats = per_class_stats(predictions, labels)?;
    Ok(stats.iter().map(|s| s.f1).sum::<f64>() / stats.len() as f64)
}

/// Maps nationality-level predictions to `level`, keeping the first
/// occurrence of each coarse label. Scores are dropped.
pub fn project_predictions(
    predictions: &[Prediction],
    taxonomy: &Taxonomy,
    level: Granularity,
) -> Result<Vec<Prediction>, EvalError> {
    predictions
        .iter()
        .map(|p| {
            let mut ranked: Vec<String> = Vec::with_capacity(p.predicted.len());
            for label in &p.predicted {
                let coarse = taxonomy.project(label, level)?;
                if !ranked.iter().any(|r| r == coarse) {
                    ranked.push(coarse.to_string());
                }
            }
            Ok(Prediction {
                name: p.name.clone(),
                true_label: taxonomy.project(&p.true_label, level)?.to_string(),
                predicted: ranked,
                scores: None,
                strategy: p.strategy.clone(),
                flags: p.flags.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMetrics {
    pub bin: FrequencyBin,
    pub n: usize,
    /// `None` when no prediction has a true label in this bin.
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataReport {
    pub bins: Vec<BinMetrics>,
    /// Head accuracy minus Tail accuracy.
    pub delta_head_tail: Option<f64>,
    pub drop_percent: Option<f64>,
}

/// Accuracy and Macro-F1 per frequency bin.
///
/// Accuracy uses the predictions whose true label is in the bin. Per-class
/// F1 comes from the confusion over the whole set (so a Tail label
/// predicted for a Head name is a Tail false positive) and is averaged over
/// the bin's members.
pub fn strata_report(
    predictions: &[Prediction],
    labels: &LabelSpace,
    bins: &FrequencyBins,
) -> Result<StrataReport, EvalError> {
    non_empty(predictions)?;
    for p in predictions {
        if bins.get(&p.true_label).is_none() {
            return Err(EvalError::UnknownLabel(p.true_label.clone()));
        }
    }
    let stats = per_class_stats(predictions, labels)?;
    let f1_of: HashMap<&str, f64> = stats.iter().map(|s| (s.class.as_str(), s.f1)).collect();
    let mut out = Vec::with_capacity(3);
    for bin in FrequencyBin::ALL {
        let members = bins.members(bin);
        let in_bin: Vec<&Prediction> = predictions
            .iter()
            .filter(|p| bins.get(&p.true_label) == Some(bin))
            .collect();
        let n = in_bin.len();
        let accuracy =
            (n > 0).then(|| in_bin.iter().filter(|p| p.is_correct()).count() as f64 / n as f64);
        let macro_f1 = (n > 0 && !members.is_empty()).then(|| {
            members
                .iter()
                .map(|m| f1_of.get(m).copied().unwrap_or(0.0))
                .sum::<f64>()
                / members.len() as f64
        });
        out.push(BinMetrics {
            bin,
            n,
            accuracy,
            macro_f1,
        });
    }
    let (head, tail) = (out[0].accuracy, out[2].accuracy);
    let delta_head_tail = head.zip(tail).map(|(h, t)| h - t);
    let drop_percent = head
        .zip(delta_head_tail)
        .map(|(h, d)| if h == 0.0 { 0.0 } else { 100.0 * d / h });
    Ok(StrataReport {
        bins: out,
        delta_head_tail,
        drop_percent,
    })
}

/// Three-way split of nationality-level outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionLift {
    pub n: usize,
    pub nationality_correct: usize,
    pub region_only: usize,
    pub both_wrong: usize,
    pub nationality_correct_rate: f64,
    pub region_only_rate: f64,
    pub both_wrong_rate: f64,
    pub region_accuracy: f64,
}

impl RegionLift {
    pub fn from_counts(
        nationality_correct: usize,
        region_only: usize,
        both_wrong: usize,
    ) -> Result<Self, EvalError> {
        let n = nationality_correct + region_only + both_wrong;
        if n == 0 {
            return Err(EvalError::EmptySet);
        }
        let total = n as f64;
        Ok(Self {
            n,
            nationality_correct,
            region_only,
            both_wrong,
            nationality_correct_rate: nationality_correct as f64 / total,
            region_only_rate: region_only as f64 / total,
            both_wrong_rate: both_wrong as f64 / total,
            region_accuracy: (nationality_correct + region_only) as f64 / total,
        })
    }
}

pub fn region_lift(
    predictions: &[Prediction],
    taxonomy: &Taxonomy,
) -> Result<RegionLift, EvalError> {
    non_empty(predictions)?;
    let (mut correct, mut region_only, mut wrong) = (0, 0, 0);
    for p in predictions {
        let true_region = taxonomy.project(&p.true_label, Granularity::Region)?;
        match p.top1() {
            Some(pred) if pred == p.true_label => correct += 1,
            Some(pred) if taxonomy.project(pred, Granularity::Region)? == true_region => {
                region_only += 1
            }
            _ => wrong += 1,
        }
    }
    RegionLift::from_counts(correct, region_only, wrong)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionPair {
    pub true_label: String,
    pub predicted: String,
    pub count: usize,
    pub same_region: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionPairs {
    pub pairs: Vec<ConfusionPair>,
    /// Same-region share of the listed pairs; `None` when there are no errors.
    pub region_agreement: Option<f64>,
}

/// Most frequent top-1 (true, predicted) errors, ordered by
/// (count desc, true asc, predicted asc). Unknowns are not pairs.
pub fn confusion_pairs(
    predictions: &[Prediction],
    taxonomy: &Taxonomy,
    top_n: usize,
) -> Result<ConfusionPairs, EvalError> {
    let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for p in predictions {
        if let Some(pred) = p.top1() {
            if pred != p.true_label {
                *counts.entry((p.true_label.as_str(), pred)).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<((&str, &str), usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut pairs = Vec::new();
    for ((t, p), count) in ranked.into_iter().take(top_n) {
        let same_region = taxonomy.project(t, Granularity::Region)?
            == taxonomy.project(p, Granularity::Region)?;
        pairs.push(ConfusionPair {
            true_label: t.into(),
            predicted: p.into(),
            count,
            same_region,
        });
    }
    let region_agreement = (!pairs.is_empty())
        .then(|| pairs.iter().filter(|p| p.same_region).count() as f64 / pairs.len() as f64);
    Ok(ConfusionPairs {
        pairs,
        region_agreement,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub name: String,
    pub true_label: String,
    pub a_predicted: Vec<String>,
    pub b_predicted: Vec<String>,
}

/// Side-by-side outcome buckets for two prediction sources over the same names.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossModelCases {
    pub both_wrong_a_region_correct: Vec<CaseRecord>,
    pub a_wrong_b_correct: Vec<CaseRecord>,
    pub a_correct_b_wrong: Vec<CaseRecord>,
    pub both_correct: Vec<CaseRecord>,
    pub both_wrong_a_region_wrong: Vec<CaseRecord>,
}

impl CrossModelCases {
    pub fn total(&self) -> usize {
        self.both_wrong_a_region_correct.len()
            + self.a_wrong_b_correct.len()
            + self.a_correct_b_wrong.len()
            + self.both_correct.len()
            + self.both_wrong_a_region_wrong.len()
    }
}

fn occurrence_keys(predictions: &[Prediction]) -> Vec<(String, String, usize)> {
    let mut seen: HashMap<(&str, &str), usize> = HashMap::new();
    predictions
        .iter()
        .map(|p| {
            let n = seen
                .entry((p.name.as_str(), p.true_label.as_str()))
                .or_default();
            *n += 1;
            (p.name.clone(), p.true_label.clone(), *n)
        })
        .collect()
}

/// Aligns the two sets on (name, true label, occurrence index) and buckets
/// every pair, in `pred_a` order.
pub fn cross_model_cases(
    pred_a: &[Prediction],
    pred_b: &[Prediction],
    taxonomy: &Taxonomy,
) -> Result<CrossModelCases, EvalError> {
    if pred_a.len() != pred_b.len() {
        return Err(EvalError::NameSetMismatch(format!(
            "{} vs {} predictions",
            pred_a.len(),
            pred_b.len()
        )));
    }
    let b_keys = occurrence_keys(pred_b);
    let b_index: HashMap<&(String, String, usize), usize> =
        b_keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
    let mut cases = CrossModelCases::default();
    for (a, key) in pred_a.iter().zip(occurrence_keys(pred_a)) {
        let b = &pred_b[*b_index.get(&key).ok_or_else(|| {
            EvalError::NameSetMismatch(format!("`{}` ({}) missing from second set", key.0, key.1))
        })?];
        let record = CaseRecord {
            name: a.name.clone(),
            true_label: a.true_label.clone(),
            a_predicted: a.predicted.clone(),
            b_predicted: b.predicted.clone(),
        };
        let bucket = match (a.is_correct(), b.is_correct()) {
            (true, true) => &mut cases.both_correct,
            (true, false) => &mut cases.a_correct_b_wrong,
            (false, true) => &mut cases.a_wrong_b_correct,
            (false, false) => {
                let true_region = taxonomy.project(&a.true_label, Granularity::Region)?;
                let a_region_ok = match a.top1() {
                    Some(pred) => taxonomy.project(pred, Granularity::Region)? == true_region,
                    None => false,
                };
                if a_region_ok {
                    &mut cases.both_wrong_a_region_correct
                } else {
                    &mut cases.both_wrong_a_region_wrong
                }
            }
        };
        bucket.push(record);
    }
    Ok(cases)
}

/// Row-normalised confusion among the `top_n` classes with the largest
/// support. Columns are the same classes; predictions outside them (and
/// Unknowns) are left out of the row before normalising.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub support: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

pub fn top_confusion_matrix(predictions: &[Prediction], top_n: usize) -> ConfusionMatrix {
    let mut support: BTreeMap<&str, usize> = BTreeMap::new();
    for p in predictions {
        *support.entry(p.true_label.as_str()).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = support.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(top_n);
    let classes: Vec<String> = ranked.iter().map(|(c, _)| c.to_string()).collect();
    let col: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut counts = vec![vec![0usize; classes.len()]; classes.len()];
    for p in predictions {
        if let (Some(&r), Some(c)) = (
            col.get(p.true_label.as_str()),
            p.top1().and_then(|t| col.get(t)),
        ) {
            counts[r][*c] += 1;
        }
    }
    let rows = counts
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            row.iter()
                .map(|&c| {
                    if total == 0 {
                        0.0
                    } else {
                        c as f64 / total as f64
                    }
                })
                .collect()
        })
        .collect();
    ConfusionMatrix {
        classes,
        support: ranked.iter().map(|(_, s)| *s).collect(),
        rows,
    }
}

/// Whether coarse-level labels came from projecting nationality output or
/// from a source that predicted the coarse labels directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    Native,
    Project,
}

impl LabelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Native => "native",
            Self::Project => "project",
        }
    }
}

impl std::str::FromStr for LabelMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "native" => Ok(Self::Native),
            "project" | "projection" => Ok(Self::Project),
            other => Err(format!(
                "unknown mode `{other}` (expected native or project)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub source: String,
    pub granularity: Granularity,
    pub mode: LabelMode,
    pub config_fingerprint: String,
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub precision_at: BTreeMap<usize, f64>,
    pub unknown_rate: f64,
    pub per_class: Vec<PerClassStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strata: Option<StrataReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_lift: Option<RegionLift>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion_pairs: Option<ConfusionPairs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion_matrix: Option<ConfusionMatrix>,
}

#[derive(Debug, Clone)]
pub struct ReportOptions<'a> {
    pub source: String,
    pub granularity: Granularity,
    pub mode: LabelMode,
    pub ks: Vec<usize>,
    pub bins: Option<&'a FrequencyBins>,
    pub confusion_top_n: usize,
    pub matrix_top_n: usize,
    pub config_fingerprint: String,
}

impl<'a> ReportOptions<'a> {
    pub fn new(source: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            granularity: Granularity::Nationality,
            mode: LabelMode::Native,
            ks: vec![1, 3, 5],
            bins: None,
            confusion_top_n: 10,
            matrix_top_n: 15,
            config_fingerprint: String::new(),
        }
    }
}

/// Scores `predictions` at `options.granularity`.
///
/// With [`LabelMode::Project`] the input must be nationality-level and is
/// projected first; with [`LabelMode::Native`] it must already be at the
/// requested level. Strata, region lift and confusion pairs are computed
/// from nationality-level input only.
pub fn build_report(
    predictions: &[Prediction],
    taxonomy: &Taxonomy,
    options: &ReportOptions<'_>,
) -> Result<EvalReport, EvalError> {
    non_empty(predictions)?;
    let level = options.granularity;
    let nationality_input = options.mode == LabelMode::Project || level == Granularity::Nationality;
    let scored: Vec<Prediction> =
        if options.mode == LabelMode::Project && level != Granularity::Nationality {
            project_predictions(predictions, taxonomy, level)?
        } else {
            predictions.to_vec()
        };
    let labels = taxonomy.label_space(level);
    let mut precision_at = BTreeMap::new();
    for &k in &options.ks {
        precision_at.insert(k, precision_at_k(&scored, k)?);
    }
    let nat_labels = taxonomy.label_space(Granularity::Nationality);
    let strata = match (options.bins, nationality_input) {
        (Some(bins), true) if level == Granularity::Nationality => {
            Some(strata_report(predictions, nat_labels, bins)?)
        }
        _ => None,
    };
    let (region_lift, confusion_pairs) = if nationality_input {
        (
            Some(region_lift(predictions, taxonomy)?),
            Some(confusion_pairs(
                predictions,
                taxonomy,
                options.confusion_top_n,
            )?),
        )
    } else {
        (None, None)
    };
    Ok(EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        source: options.source.clone(),
        granularity: level,
        mode: options.mode,
        config_fingerprint: options.config_fingerprint.clone(),
        n: scored.len(),
        accuracy: accuracy(&scored)?,
        macro_f1: macro_f1(&scored, labels)?,
        precision_at,
        unknown_rate: unknown_rate(&scored)?,
        per_class: per_class_stats(&scored, labels)?,
        strata,
        region_lift,
        confusion_pairs,
        confusion_matrix: Some(top_confusion_matrix(&scored, options.matrix_top_n)),
    })
}
