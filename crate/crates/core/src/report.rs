//! Report bundles: Markdown tables, plot-ready CSVs and seed aggregation.
//!
//! Renderers only format numbers already stored in the bundle; nothing is
//! recomputed from predictions here.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{EvalReport, LabelMode};
use crate::taxonomy::Granularity;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unknown table kind `{0}` (expected metrics, granularity, strata, region_lift or confusion_pairs)")]
    UnknownTableKind(String),
    #[error("unknown plot kind `{0}` (expected strata, confusion or length_histogram)")]
    UnknownPlotKind(String),
    #[error("bundle has no reports")]
    EmptyBundle,
    #[error("no report in the bundle carries {0}")]
    MissingAnalysis(&'static str),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    /// Unique within the bundle, e.g. `svm@seed1`.
    pub id: String,
    /// Row label shared by all seeds of one method.
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub dataset_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub format_version: u32,
    pub entries: Vec<ReportEntry>,
    pub provenance: Provenance,
    /// Name length -> count, from corpus statistics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_histogram: Option<BTreeMap<usize, usize>>,
}

impl ReportBundle {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            format_version: BUNDLE_FORMAT_VERSION,
            entries: Vec::new(),
            provenance,
            length_histogram: None,
        }
    }

    pub fn push(&mut self, method: impl Into<String>, seed: Option<u64>, report: EvalReport) {
        let method = method.into();
        let base = match seed {
            Some(s) => format!(
                "{method}/{}/{}@seed{s}",
                report.granularity,
                report.mode.as_str()
            ),
            None => format!("{method}/{}/{}", report.granularity, report.mode.as_str()),
        };
        let mut id = base.clone();
        let mut n = 2;
        while self.entries.iter().any(|e| e.id == id) {
            id = format!("{base}#{n}");
            n += 1;
        }
        self.entries.push(ReportEntry {
            id,
            method,
            seed,
            report,
        });
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    /// Accuracy, Macro-F1, P@3, P@5 per method.
    Metrics,
    /// Accuracy per method at each granularity.
    Granularity,
    /// Head/Mid/Tail accuracy with the Head-Tail gap.
    Strata,
    RegionLift,
    ConfusionPairs,
}

impl TableKind {
    pub const ALL: [TableKind; 5] = [
        Self::Metrics,
        Self::Granularity,
        Self::Strata,
        Self::RegionLift,
        Self::ConfusionPairs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Metrics => "metrics",
            Self::Granularity => "granularity",
            Self::Strata => "strata",
            Self::RegionLift => "region_lift",
            Self::ConfusionPairs => "confusion_pairs",
        }
    }
}

impl FromStr for TableKind {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.replace('-', "_"))
            .ok_or_else(|| ReportError::UnknownTableKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Strata,
    Confusion,
    LengthHistogram,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [Self::Strata, Self::Confusion, Self::LengthHistogram];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Strata => "strata",
            Self::Confusion => "confusion",
            Self::LengthHistogram => "length_histogram",
        }
    }
}

impl FromStr for PlotKind {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.replace('-', "_"))
            .ok_or_else(|| ReportError::UnknownPlotKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation (n − 1); zero for a single run.
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, sd, n }
    }

    /// `0.481` for one run, `0.481 ± 0.004` for several.
    pub fn cell(&self) -> String {
        if self.n > 1 {
            format!("{:.3} ± {:.3}", self.mean, self.sd)
        } else {
            format!("{:.3}", self.mean)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub granularity: Granularity,
    pub mode: LabelMode,
    pub metrics: BTreeMap<String, MeanSd>,
}

fn scalar_metrics(report: &EvalReport) -> Vec<(String, f64)> {
    let mut out = vec![
        ("accuracy".to_string(), report.accuracy),
        ("macro_f1".to_string(), report.macro_f1),
    ];
    out.extend(
        report
            .precision_at
            .iter()
            .map(|(k, v)| (format!("p@{k}"), *v)),
    );
    out.push(("unknown_rate".into(), report.unknown_rate));
    if let Some(s) = &report.strata {
        for b in &s.bins {
            if let Some(a) = b.accuracy {
                out.push((format!("{}_accuracy", b.bin.as_str().to_lowercase()), a));
            }
        }
        if let Some(d) = s.delta_head_tail {
            out.push(("delta_head_tail".into(), d));
        }
        if let Some(d) = s.drop_percent {
            out.push(("drop_percent".into(), d));
        }
    }
    if let Some(l) = &report.region_lift {
        out.push(("region_lift".into(), l.region_only_rate));
    }
    out
}

/// Mean and sample sd of every scalar metric, grouped by
/// (method, granularity, mode) in order of first appearance.
pub fn aggregate_seeds(entries: &[ReportEntry]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, Granularity, LabelMode)> = Vec::new();
    let mut values: Vec<BTreeMap<String, Vec<f64>>> = Vec::new();
    for e in entries {
        let key = (e.method.clone(), e.report.granularity, e.report.mode);
        let slot = match keys.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                keys.push(key);
                values.push(BTreeMap::new());
                keys.len() - 1
            }
        };
        for (name, v) in scalar_metrics(&e.report) {
            values[slot].entry(name).or_default().push(v);
        }
    }
    keys.into_iter()
        .zip(values)
        .map(|((method, granularity, mode), vals)| AggregateRow {
            method,
            granularity,
            mode,
            metrics: vals.into_iter().map(|(k, v)| (k, MeanSd::of(&v))).collect(),
        })
        .collect()
}

fn row_label(row: &AggregateRow, multi_level: bool) -> String {
    if multi_level {
        format!(
            "{} ({}, {})",
            row.method,
            row.granularity,
            row.mode.as_str()
        )
    } else {
        row.method.clone()
    }
}

fn metric_cell(row: &AggregateRow, key: &str) -> String {
    row.metrics
        .get(key)
        .map(MeanSd::cell)
        .unwrap_or_else(|| "–".into())
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(
        out,
        "|{}|",
        header.iter().map(|_| "---").collect::<Vec<_>>().join("|")
    );
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
}

pub fn render_markdown(bundle: &ReportBundle, kind: TableKind) -> Result<String, ReportError> {
    if bundle.entries.is_empty() {
        return Err(ReportError::EmptyBundle);
    }
    let rows = aggregate_seeds(&bundle.entries);
    let mut out = String::new();
    match kind {
        TableKind::Metrics => {
            let multi = rows
                .iter()
                .any(|r| r.granularity != rows[0].granularity || r.mode != rows[0].mode);
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        row_label(r, multi),
                        metric_cell(r, "accuracy"),
                        metric_cell(r, "macro_f1"),
                        metric_cell(r, "p@3"),
                        metric_cell(r, "p@5"),
                    ]
                })
                .collect();
            table(
                &mut out,
                &[
                    "Method",
                    "Accuracy",
                    "Macro-F1",
                    "Precision@3",
                    "Precision@5",
                ],
                &body,
            );
        }
        TableKind::Granularity => {
            let mut methods: Vec<&str> = Vec::new();
            rows.iter().for_each(|r| {
                if !methods.contains(&r.method.as_str()) {
                    methods.push(&r.method)
                }
            });
            let body: Vec<Vec<String>> = methods
                .iter()
                .map(|m| {
                    let mut cells = vec![m.to_string()];
                    for level in Granularity::ALL {
                        let cell = rows
                            .iter()
                            .find(|r| r.method == *m && r.granularity == level)
                            .map(|r| {
                                format!("{} ({})", metric_cell(r, "accuracy"), r.mode.as_str())
                            })
                            .unwrap_or_else(|| "–".into());
                        cells.push(cell);
                    }
                    cells
                })
                .collect();
            table(
                &mut out,
                &["Method", "Nationality", "Region", "Continent"],
                &body,
            );
        }
        TableKind::Strata => {
            let body: Vec<Vec<String>> = rows
                .iter()
                .filter(|r| r.metrics.contains_key("delta_head_tail"))
                .map(|r| {
                    let drop = r.metrics.get("drop_percent").map(|m| {
                        if m.n > 1 {
                            format!("{:.1}% ± {:.1}", m.mean, m.sd)
                        } else {
                            format!("{:.1}%", m.mean)
                        }
                    });
                    vec![
                        r.method.clone(),
                        metric_cell(r, "head_accuracy"),
                        metric_cell(r, "mid_accuracy"),
                        metric_cell(r, "tail_accuracy"),
                        signed(r.metrics["delta_head_tail"]),
                        drop.unwrap_or_else(|| "–".into()),
                    ]
                })
                .collect();
            if body.is_empty() {
                return Err(ReportError::MissingAnalysis("frequency strata"));
            }
            table(
                &mut out,
                &["Method", "Head", "Mid", "Tail", "Δ(H-T)", "Drop%"],
                &body,
            );
        }
        TableKind::RegionLift => {
            let body: Vec<Vec<String>> = bundle
                .entries
                .iter()
                .filter_map(|e| e.report.region_lift.as_ref().map(|l| (e, l)))
                .map(|(e, l)| {
                    vec![
                        e.id.clone(),
                        format!(
                            "{} ({:.3})",
                            l.nationality_correct, l.nationality_correct_rate
                        ),
                        format!("{} ({:.3})", l.region_only, l.region_only_rate),
                        format!("{} ({:.3})", l.both_wrong, l.both_wrong_rate),
                        format!("{:.3}", l.region_accuracy),
                    ]
                })
                .collect();
            if body.is_empty() {
                return Err(ReportError::MissingAnalysis("region lift"));
            }
            table(
                &mut out,
                &[
                    "Source",
                    "Nationality Correct",
                    "Nationality Wrong, Region Correct",
                    "Both Wrong",
                    "Region Accuracy",
                ],
                &body,
            );
        }
        TableKind::ConfusionPairs => {
            let mut any = false;
            for e in &bundle.entries {
                let Some(cp) = &e.report.confusion_pairs else {
                    continue;
                };
                any = true;
                let _ = writeln!(out, "### {}\n", e.id);
                let body: Vec<Vec<String>> = cp
                    .pairs
                    .iter()
                    .map(|p| {
                        vec![
                            format!("{} → {}", p.true_label, p.predicted),
                            p.count.to_string(),
                            if p.same_region { "✓" } else { "✗" }.to_string(),
                        ]
                    })
                    .collect();
                table(&mut out, &["True → Pred", "Count", "Same"], &body);
                let rate = cp
                    .region_agreement
                    .map(|r| format!("{r:.3}"))
                    .unwrap_or_else(|| "n/a".into());
                let _ = writeln!(out, "\nRegion agreement: {rate}\n");
            }
            if !any {
                return Err(ReportError::MissingAnalysis("confusion pairs"));
            }
        }
    }
    Ok(out)
}

fn signed(m: MeanSd) -> String {
    if m.n > 1 {
        format!("{:+.3} ± {:.3}", m.mean, m.sd)
    } else {
        format!("{:+.3}", m.mean)
    }
}

fn csv_string(
    write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<(), csv::Error>,
) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w)?;
    let bytes = w
        .into_inner()
        .map_err(|e| ReportError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// CSV for the figure renderer. Schemas:
///
/// * strata: `method,bin,accuracy,macro_f1`
/// * confusion: `method,true_label,predicted_label,rate` (row-normalised)
/// * length_histogram: `length,count`
pub fn emit_plot_data(bundle: &ReportBundle, kind: PlotKind) -> Result<String, ReportError> {
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    match kind {
        PlotKind::Strata => {
            let with: Vec<&ReportEntry> = bundle
                .entries
                .iter()
                .filter(|e| e.report.strata.is_some())
                .collect();
            if with.is_empty() {
                return Err(ReportError::MissingAnalysis("frequency strata"));
            }
            csv_string(|w| {
                w.write_record(["method", "bin", "accuracy", "macro_f1"])?;
                for e in with {
                    for b in &e.report.strata.as_ref().unwrap().bins {
                        w.write_record([
                            e.id.as_str(),
                            b.bin.as_str(),
                            &fmt(b.accuracy),
                            &fmt(b.macro_f1),
                        ])?;
                    }
                }
                Ok(())
            })
        }
        PlotKind::Confusion => {
            let with: Vec<&ReportEntry> = bundle
                .entries
                .iter()
                .filter(|e| e.report.confusion_matrix.is_some())
                .collect();
            if with.is_empty() {
                return Err(ReportError::MissingAnalysis("a confusion matrix"));
            }
            csv_string(|w| {
                w.write_record(["method", "true_label", "predicted_label", "rate"])?;
                for e in with {
                    let m = e.report.confusion_matrix.as_ref().unwrap();
                    for (t, row) in m.classes.iter().zip(&m.rows) {
                        for (p, v) in m.classes.iter().zip(row) {
                            w.write_record([e.id.as_str(), t, p, &v.to_string()])?;
                        }
                    }
                }
                Ok(())
            })
        }
        PlotKind::LengthHistogram => {
            let hist = bundle
                .length_histogram
                .as_ref()
                .ok_or(ReportError::MissingAnalysis("a name-length histogram"))?;
            csv_string(|w| {
                w.write_record(["length", "count"])?;
                for (l, c) in hist {
                    w.write_record([l.to_string(), c.to_string()])?;
                }
                Ok(())
            })
        }
    }
}

/// Writes `report.json`, `tables/<kind>.md` and `plotdata/<kind>.csv`
/// under `dir`, skipping tables and plots whose analysis is absent.
pub fn write_bundle(
    bundle: &ReportBundle,
    dir: impl AsRef<Path>,
) -> Result<Vec<String>, ReportError> {
    let dir = dir.as_ref();
    let write = |rel: String, text: &str| -> Result<String, ReportError> {
        let path = dir.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| ReportError::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
        std::fs::write(&path, text).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(rel)
    };
    let mut written = vec![write("report.json".into(), &bundle.to_json())?];
    for kind in TableKind::ALL {
        match render_markdown(bundle, kind) {
            Ok(md) => written.push(write(format!("tables/{}.md", kind.as_str()), &md)?),
            Err(ReportError::MissingAnalysis(_)) => {}
            Err(e) => return Err(e),
        }
    }
    for kind in PlotKind::ALL {
        match emit_plot_data(bundle, kind) {
            Ok(csv) => written.push(write(format!("plotdata/{}.csv", kind.as_str()), &csv)?),
            Err(ReportError::MissingAnalysis(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(written)
}
