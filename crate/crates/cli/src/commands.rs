//! One function per subcommand.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use natpred_core::dataset::{
    corpus_stats, load_raw, preprocess, raw_label_counts, CorpusStats, Manifest, NameRecord,
    SplitDataset,
};
use natpred_core::evaluation::{
    build_report, cross_model_cases, read_dump, write_dump, CaseRecord, CrossModelCases,
    EvalReport, LabelMode, Prediction, ReportOptions,
};
use natpred_core::features::{fit_vocabulary, transform, Vocabulary};
use natpred_core::linear_model::{self, LinearModel};
use natpred_core::report::{render_markdown, write_bundle, Provenance, ReportBundle, TableKind};
use natpred_core::shallow_model::{self, ShallowModel};
use natpred_core::taxonomy::{
    assign_frequency_bins_with_tiebreak, validate_taxonomy, FrequencyBins, Granularity, LabelSpace,
    Taxonomy, TaxonomyMap,
};
use natpred_llm::{
    default_fewshot_examples, BatchSummary, ChatProvider, HttpProvider, MockProvider, MockScript,
    Orchestrator, PromptRun, RunFlags, StageTrace, StrategyKind,
};
use serde::{Deserialize, Serialize};

use crate::config::{ProviderKind, RunConfig};
use crate::error::{io_error, CliError};
use crate::{ModelKind, SplitName};

pub const MODEL_FILE: &str = "model.bin";
pub const VOCAB_FILE: &str = "vocab.json";
pub const TRAIN_INFO_FILE: &str = "train.json";
pub const CORPUS_FILE: &str = "corpus.json";

/// Written next to a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainInfo {
    pub model: String,
    pub dataset_fingerprint: String,
    pub config_fingerprint: String,
    pub n_train: usize,
    pub n_dev: usize,
    pub dev_accuracy: Option<f64>,
}

/// One line of an LLM trace file. Wall-clock latency is left out so traces
/// of mock runs are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub name: String,
    pub true_label: String,
    pub strategy: StrategyKind,
    pub prompt_version: String,
    pub stages: Vec<StageTrace>,
    pub predicted: Vec<String>,
    pub flags: RunFlags,
}

impl TraceRecord {
    fn new(run: &PromptRun, true_label: &str) -> Self {
        Self {
            name: run.name.clone(),
            true_label: true_label.to_string(),
            strategy: run.strategy,
            prompt_version: run.prompt_version.clone(),
            stages: run.stages.clone(),
            predicted: run.predicted.clone(),
            flags: run.flags.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRunSummary {
    pub strategy: StrategyKind,
    pub granularity: Granularity,
    pub provider: ProviderKind,
    pub batch: BatchSummary,
    /// Highest number of concurrent requests seen by the mock provider.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn to_json_pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serialises") + "\n"
}

pub fn load_taxonomy(config: &RunConfig) -> Result<Taxonomy, CliError> {
    match &config.data.taxonomy {
        None => Ok(Taxonomy::shipped()),
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Config(format!(
                    "taxonomy file {} does not exist",
                    path.display()
                )));
            }
            Ok(Taxonomy::from_map(TaxonomyMap::load(path)?))
        }
    }
}

fn split_records(split: &SplitDataset, which: SplitName) -> &[NameRecord] {
    match which {
        SplitName::Train => &split.train,
        SplitName::Dev => &split.dev,
        SplitName::Test => &split.test,
    }
}

fn read_split(config: &RunConfig) -> Result<(SplitDataset, Manifest), CliError> {
    let dir = config.data_dir();
    for file in ["manifest.json", "train.tsv", "dev.tsv", "test.tsv"] {
        if !dir.join(file).exists() {
            return Err(CliError::Data(format!(
                "{} is missing; run `natpred prepare` with the same --out first",
                dir.join(file).display()
            )));
        }
    }
    Ok(SplitDataset::read(&dir)?)
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn prepare(config: &RunConfig) -> Result<(), CliError> {
    let raw_path = &config.data.raw;
    if !raw_path.exists() {
        return Err(CliError::Data(format!(
            "corpus {} does not exist (scripts/fetch_name2nat.py rebuilds the name2nat file)",
            raw_path.display()
        )));
    }
    let taxonomy = load_taxonomy(config)?;
    let records = load_raw(raw_path)?;
    let split = preprocess(&records, &config.preprocess_config())?;
    let labels = split.labels();
    let unmapped: Vec<&String> = labels
        .iter()
        .filter(|l| !taxonomy.label_space(Granularity::Nationality).contains(l))
        .collect();
    if !unmapped.is_empty() {
        return Err(CliError::Data(format!(
            "labels missing from the taxonomy: {unmapped:?}"
        )));
    }
    let dir = config.data_dir();
    let manifest = split.write(&dir, &raw_label_counts(&records))?;
    let kept: Vec<NameRecord> = split
        .train
        .iter()
        .chain(&split.dev)
        .chain(&split.test)
        .cloned()
        .collect();
    let stats = corpus_stats(&kept);
    write_text(&dir.join(CORPUS_FILE), &to_json_pretty(&stats))?;

    let t = &manifest.totals;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "corpus {} ({} records, {} labels)",
        raw_path.display(),
        thousands(records.len()),
        raw_label_counts(&records).len()
    );
    let _ = writeln!(
        out,
        "kept {} labels with >= {} records, capped at {}",
        manifest.n_labels, config.preprocess.min_samples, config.preprocess.cap
    );
    let _ = writeln!(out, "| Split | Names |\n|---|---|");
    for (name, n) in [
        ("Train", t.train),
        ("Dev", t.dev),
        ("Test", t.test),
        ("Total", t.total()),
    ] {
        let _ = writeln!(out, "| {name} | {} |", thousands(n));
    }
    let _ = writeln!(
        out,
        "name length: mean {:.2}, median {:.1}",
        stats.mean_length, stats.median_length
    );
    let full = taxonomy.label_space(Granularity::Nationality).len();
    if labels.len() == full {
        let check = validate_taxonomy(taxonomy.map(), &labels);
        let verdict = if check.passed {
            "passed".to_string()
        } else {
            format!("FAILED ({})", check.summary())
        };
        let _ = writeln!(out, "taxonomy check: {verdict}");
    } else {
        let _ = writeln!(
            out,
            "taxonomy check: skipped ({} of {full} labels present)",
            labels.len()
        );
    }
    let _ = writeln!(
        out,
        "manifest {} fingerprint {}",
        dir.join("manifest.json").display(),
        manifest.fingerprint
    );
    print!("{out}");
    Ok(())
}

fn label_indices(records: &[NameRecord], labels: &LabelSpace) -> Result<Vec<usize>, CliError> {
    records
        .iter()
        .map(|r| {
            labels.index_of(&r.nationality).ok_or_else(|| {
                CliError::Data(format!("label `{}` not in the taxonomy", r.nationality))
            })
        })
        .collect()
}

pub fn train(config: &RunConfig, model: ModelKind) -> Result<(), CliError> {
    let (split, manifest) = read_split(config)?;
    let taxonomy = load_taxonomy(config)?;
    let labels = taxonomy.label_space(Granularity::Nationality);
    let dir = config.model_dir(model.as_str());
    std::fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    let dev_accuracy = match model {
        ModelKind::Svm => {
            let names: Vec<&str> = split.train.iter().map(|r| r.name.as_str()).collect();
            let vocab = fit_vocabulary(&names, &config.svm.ngram)?;
            let featurize = |rs: &[NameRecord]| {
                rs.iter()
                    .map(|r| transform(&r.name, &vocab))
                    .collect::<Vec<_>>()
            };
            let (train_x, dev_x) = (featurize(&split.train), featurize(&split.dev));
            let (train_y, dev_y) = (
                label_indices(&split.train, labels)?,
                label_indices(&split.dev, labels)?,
            );
            let fitted = linear_model::train(
                &train_x,
                &train_y,
                &dev_x,
                &dev_y,
                labels,
                &vocab,
                &config.linear_config(),
            )?;
            vocab.save(dir.join(VOCAB_FILE))?;
            fitted.save(dir.join(MODEL_FILE))?;
            (!dev_x.is_empty()).then(|| {
                let correct = dev_x
                    .iter()
                    .zip(&dev_y)
                    .filter(|(x, y)| fitted.predict_topk(x, 1)[0].label == labels.label(**y))
                    .count();
                correct as f64 / dev_x.len() as f64
            })
        }
        ModelKind::Fasttext => {
            let fitted =
                shallow_model::train(&split.train, &split.dev, labels, &config.shallow_config())?;
            fitted.save(dir.join(MODEL_FILE))?;
            fitted.dev_accuracy
        }
    };
    let info = TrainInfo {
        model: model.as_str().into(),
        dataset_fingerprint: manifest.fingerprint.clone(),
        config_fingerprint: config.fingerprint(),
        n_train: split.train.len(),
        n_dev: split.dev.len(),
        dev_accuracy,
    };
    write_text(&dir.join(TRAIN_INFO_FILE), &to_json_pretty(&info))?;
    match dev_accuracy {
        Some(acc) => println!(
            "{} dev accuracy {acc:.4} ({} train, {} dev)",
            model.as_str(),
            split.train.len(),
            split.dev.len()
        ),
        None => println!(
            "{} trained on {} names (empty dev split)",
            model.as_str(),
            split.train.len()
        ),
    }
    println!("model written to {}", dir.join(MODEL_FILE).display());
    Ok(())
}

pub fn predict(
    config: &RunConfig,
    model: ModelKind,
    k: usize,
    which: SplitName,
    vocab_path: Option<&Path>,
) -> Result<(), CliError> {
    if k == 0 {
        return Err(CliError::Config("--k must be >= 1".into()));
    }
    let dir = config.model_dir(model.as_str());
    let model_path = dir.join(MODEL_FILE);
    if !model_path.exists() {
        return Err(CliError::Data(format!(
            "{} is missing; run `natpred train --model {}` first",
            model_path.display(),
            model.as_str()
        )));
    }
    let (split, manifest) = read_split(config)?;
    let info: TrainInfo = serde_json::from_str(&read_text(&dir.join(TRAIN_INFO_FILE))?)
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.join(TRAIN_INFO_FILE).display())))?;
    if info.dataset_fingerprint != manifest.fingerprint {
        return Err(CliError::Data(format!(
            "model was trained on split {} but {} holds split {}",
            info.dataset_fingerprint,
            config.data_dir().display(),
            manifest.fingerprint
        )));
    }
    let records = split_records(&split, which);
    let strategy = model.as_str();
    let predictions: Vec<Prediction> = match model {
        ModelKind::Svm => {
            let fitted = LinearModel::load(&model_path)?;
            let vocab = Vocabulary::load(
                vocab_path
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| dir.join(VOCAB_FILE)),
            )?;
            fitted.check_vocabulary(&vocab)?;
            records
                .iter()
                .map(|r| {
                    scored_prediction(
                        r,
                        fitted.predict_topk(&transform(&r.name, &vocab), k),
                        strategy,
                    )
                })
                .collect()
        }
        ModelKind::Fasttext => {
            let fitted = ShallowModel::load(&model_path, Some(config.shallow_config().buckets()))?;
            records
                .iter()
                .map(|r| scored_prediction(r, fitted.predict_topk(&r.name, k), strategy))
                .collect()
        }
    };
    let path = config.predictions_dir().join(format!("{strategy}.jsonl"));
    std::fs::create_dir_all(config.predictions_dir())
        .map_err(|e| io_error(&config.predictions_dir(), e))?;
    write_dump(&path, &predictions)?;
    println!(
        "{} predictions (top-{k}) written to {}",
        predictions.len(),
        path.display()
    );
    Ok(())
}

fn scored_prediction(
    record: &NameRecord,
    top: Vec<natpred_core::ScoredLabel>,
    strategy: &str,
) -> Prediction {
    let (labels, scores): (Vec<String>, Vec<f64>) =
        top.into_iter().map(|s| (s.label, s.score)).unzip();
    let mut p = Prediction::new(&record.name, &record.nationality, labels, strategy);
    p.scores = Some(scores);
    p
}

pub struct LlmArgs {
    pub strategy: StrategyKind,
    pub provider: ProviderKind,
    pub script: Option<PathBuf>,
    pub granularity: Granularity,
    pub limit: Option<usize>,
    pub split: SplitName,
}

pub fn llm(config: &RunConfig, args: &LlmArgs) -> Result<(), CliError> {
    // provider first: a missing credential must stop the run before anything else
    let mock: Option<Arc<MockProvider>> = match args.provider {
        ProviderKind::Mock => {
            let path = args.script.as_ref().ok_or_else(|| {
                CliError::Config("the mock provider needs --script or llm.script".into())
            })?;
            Some(Arc::new(MockProvider::new(MockScript::load(path)?)))
        }
        ProviderKind::Http => None,
    };
    let provider: Arc<dyn ChatProvider> = match &mock {
        Some(m) => m.clone(),
        None => {
            let token = config.llm.resolve_api_key()?;
            Arc::new(HttpProvider::new(
                &config.llm.endpoint,
                token,
                Duration::from_secs(config.llm.timeout_secs),
            )?)
        }
    };
    let (split, _) = read_split(config)?;
    let taxonomy = Arc::new(load_taxonomy(config)?);
    let mut records = split_records(&split, args.split).to_vec();
    if let Some(n) = args.limit {
        records.truncate(n);
    }
    if records.is_empty() {
        return Err(CliError::Data("no names to run".into()));
    }
    let truths: Vec<String> = records
        .iter()
        .map(|r| {
            taxonomy
                .project(&r.nationality, args.granularity)
                .map(str::to_string)
        })
        .collect::<Result<_, _>>()?;
    let mut orchestrator = Orchestrator::new(
        provider,
        taxonomy.clone(),
        args.granularity,
        config.llm.params.clone(),
        config.llm.policy.clone(),
    )?;
    if args.strategy == StrategyKind::FewShot {
        orchestrator =
            orchestrator.with_fewshot(default_fewshot_examples(&split.train, &taxonomy))?;
    }
    let names: Vec<&str> = records.iter().map(|r| r.name.as_str()).collect();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Provider(format!("cannot start async runtime: {e}")))?;
    let batch = runtime.block_on(orchestrator.run_batch(&names, args.strategy))?;

    let tag = format!("llm_{}", args.strategy);
    let predictions: Vec<Prediction> = batch
        .runs
        .iter()
        .zip(&truths)
        .map(|(run, t)| run.to_prediction(t))
        .collect();
    let dump = config.predictions_dir().join(format!("{tag}.jsonl"));
    std::fs::create_dir_all(config.predictions_dir())
        .map_err(|e| io_error(&config.predictions_dir(), e))?;
    write_dump(&dump, &predictions)?;
    let mut traces = String::new();
    for (run, t) in batch.runs.iter().zip(&truths) {
        traces
            .push_str(&serde_json::to_string(&TraceRecord::new(run, t)).expect("trace serialises"));
        traces.push('\n');
    }
    let trace_dir = config.out.join("traces");
    write_text(&trace_dir.join(format!("{tag}.jsonl")), &traces)?;
    let summary = LlmRunSummary {
        strategy: args.strategy,
        granularity: args.granularity,
        provider: args.provider,
        batch: batch.summary.clone(),
        max_in_flight: mock.as_ref().map(|m| m.max_in_flight()),
    };
    write_text(
        &trace_dir.join(format!("{tag}.summary.json")),
        &to_json_pretty(&summary),
    )?;

    let s = &batch.summary;
    println!(
        "{} on {} names: {} requests, {} unknown ({:.3}), {} parse errors",
        args.strategy, s.n, s.requests, s.unknown, s.unknown_rate, s.parse_errors
    );
    println!("retry histogram {:?}", s.retry_histogram);
    println!("dump written to {}", dump.display());
    Ok(())
}

/// Granularities selected by `eval --granularity`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Levels {
    All,
    One(Granularity),
}

impl Levels {
    fn list(self) -> Vec<Granularity> {
        match self {
            Self::All => Granularity::ALL.to_vec(),
            Self::One(g) => vec![g],
        }
    }
}

pub struct EvalArgs {
    pub dumps: Vec<PathBuf>,
    pub levels: Levels,
    pub mode: LabelMode,
    pub strata: bool,
    pub compare: bool,
}

fn method_of(path: &Path, predictions: &[Prediction]) -> String {
    predictions
        .first()
        .map(|p| p.strategy.clone())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
}

/// Bins from the manifest: training counts, ties broken by raw corpus counts.
fn manifest_bins(config: &RunConfig) -> Result<FrequencyBins, CliError> {
    let path = config.data_dir().join("manifest.json");
    if !path.exists() {
        return Err(CliError::Data(format!(
            "--strata needs {} (run `natpred prepare` first)",
            path.display()
        )));
    }
    let manifest: Manifest = serde_json::from_str(&read_text(&path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let train: BTreeMap<String, usize> = manifest
        .labels
        .iter()
        .map(|(l, c)| (l.clone(), c.train))
        .collect();
    let raw: BTreeMap<String, usize> = manifest
        .labels
        .iter()
        .map(|(l, c)| (l.clone(), c.raw))
        .collect();
    let space = LabelSpace::new(manifest.labels.keys(), Granularity::Nationality);
    Ok(assign_frequency_bins_with_tiebreak(
        &train,
        Some(&raw),
        &space,
    )?)
}

pub fn eval(config: &RunConfig, args: &EvalArgs) -> Result<(), CliError> {
    if args.dumps.is_empty() {
        return Err(CliError::Config("eval needs at least one --dump".into()));
    }
    if args.compare && args.dumps.len() != 2 {
        return Err(CliError::Config(format!(
            "--compare needs exactly two --dump files, got {}",
            args.dumps.len()
        )));
    }
    let taxonomy = load_taxonomy(config)?;
    let bins = if args.strata {
        Some(manifest_bins(config)?)
    } else {
        None
    };
    let fingerprint = config.fingerprint();
    let dataset_fingerprint = {
        let path = config.data_dir().join("manifest.json");
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str::<Manifest>(&text)
                .map(|m| m.fingerprint)
                .unwrap_or_default(),
            Err(_) => String::new(),
        }
    };
    let mut bundle = ReportBundle::new(Provenance {
        config: config.to_value(),
        seeds: vec![config.seed],
        dataset_fingerprint,
    });
    let corpus = config.data_dir().join(CORPUS_FILE);
    if corpus.exists() {
        let stats: CorpusStats = serde_json::from_str(&read_text(&corpus)?)
            .map_err(|e| CliError::Data(format!("{}: {e}", corpus.display())))?;
        bundle.length_histogram = Some(stats.length_histogram);
    }

    let mut loaded: Vec<(String, Vec<Prediction>)> = Vec::new();
    for path in &args.dumps {
        if !path.exists() {
            return Err(CliError::Data(format!(
                "dump {} does not exist",
                path.display()
            )));
        }
        let predictions = read_dump(path)?;
        let method = method_of(path, &predictions);
        for level in args.levels.list() {
            let options = ReportOptions {
                source: method.clone(),
                granularity: level,
                mode: args.mode,
                ks: config.eval.ks.clone(),
                bins: bins.as_ref(),
                confusion_top_n: config.eval.confusion_top_n,
                matrix_top_n: config.eval.matrix_top_n,
                config_fingerprint: fingerprint.clone(),
            };
            bundle.push(
                method.clone(),
                Some(config.seed),
                build_report(&predictions, &taxonomy, &options)?,
            );
        }
        loaded.push((method, predictions));
    }

    let dir = config.out.join("eval");
    write_text(&dir.join("report.json"), &bundle.to_json())?;
    print_summary(&bundle);
    if args.strata {
        println!("\n{}", render_markdown(&bundle, TableKind::Strata)?);
    }
    if args.compare {
        let (a, b) = (&loaded[0], &loaded[1]);
        let cases = cross_model_cases(&a.1, &b.1, &taxonomy)?;
        write_text(&dir.join("cases.json"), &to_json_pretty(&cases))?;
        let md = render_cases(&a.0, &b.0, &cases);
        write_text(&dir.join("cases.md"), &md)?;
        println!("\n{md}");
    }
    println!("bundle written to {}", dir.join("report.json").display());
    Ok(())
}

fn print_summary(bundle: &ReportBundle) {
    println!("| Report | N | Accuracy | Macro-F1 | Precision@k | Unknown |");
    println!("|---|---|---|---|---|---|");
    for e in &bundle.entries {
        let r: &EvalReport = &e.report;
        let pk: Vec<String> = r
            .precision_at
            .iter()
            .map(|(k, v)| format!("P@{k} {v:.3}"))
            .collect();
        println!(
            "| {} [{}] | {} | {:.3} | {:.3} | {} | {:.3} |",
            e.id,
            r.mode.as_str(),
            r.n,
            r.accuracy,
            r.macro_f1,
            pk.join(", "),
            r.unknown_rate
        );
    }
}

/// Markdown view of the five outcome buckets, up to five names each.
pub fn render_cases(a: &str, b: &str, cases: &CrossModelCases) -> String {
    let buckets: [(String, &Vec<CaseRecord>); 5] = [
        (
            format!("both wrong, {a} region correct"),
            &cases.both_wrong_a_region_correct,
        ),
        (format!("{a} wrong, {b} correct"), &cases.a_wrong_b_correct),
        (format!("{a} correct, {b} wrong"), &cases.a_correct_b_wrong),
        ("both correct".to_string(), &cases.both_correct),
        (
            format!("both wrong, {a} region wrong"),
            &cases.both_wrong_a_region_wrong,
        ),
    ];
    let total = cases.total().max(1) as f64;
    let mut out = String::from("| Case | Count | Share |\n|---|---|---|\n");
    for (title, records) in &buckets {
        let _ = writeln!(
            out,
            "| {title} | {} | {:.3} |",
            records.len(),
            records.len() as f64 / total
        );
    }
    let top = |labels: &[String]| labels.first().cloned().unwrap_or_else(|| "Unknown".into());
    for (title, records) in &buckets {
        if records.is_empty() {
            continue;
        }
        let _ = write!(
            out,
            "\n### {title}\n\n| Name | True | {a} | {b} |\n|---|---|---|---|\n"
        );
        for r in records.iter().take(5) {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                r.name,
                r.true_label,
                top(&r.a_predicted),
                top(&r.b_predicted)
            );
        }
    }
    out
}

pub fn report(config: &RunConfig, bundles: &[PathBuf]) -> Result<(), CliError> {
    let default = [config.out.join("eval").join("report.json")];
    let paths: &[PathBuf] = if bundles.is_empty() {
        &default
    } else {
        bundles
    };
    let mut merged: Option<ReportBundle> = None;
    let mut seeds = BTreeSet::new();
    let mut fingerprints = BTreeSet::new();
    for path in paths {
        if !path.exists() {
            return Err(CliError::Data(format!(
                "bundle {} does not exist (run `natpred eval` first)",
                path.display()
            )));
        }
        let bundle = ReportBundle::from_json(&read_text(path)?)?;
        seeds.extend(bundle.provenance.seeds.iter().copied());
        if !bundle.provenance.dataset_fingerprint.is_empty() {
            fingerprints.insert(bundle.provenance.dataset_fingerprint.clone());
        }
        match merged.as_mut() {
            None => merged = Some(bundle),
            Some(m) => {
                for e in bundle.entries {
                    m.push(e.method, e.seed, e.report);
                }
                if m.length_histogram.is_none() {
                    m.length_histogram = bundle.length_histogram;
                }
            }
        }
    }
    let mut bundle = merged.expect("at least one bundle");
    bundle.provenance.seeds = seeds.into_iter().collect();
    bundle.provenance.dataset_fingerprint = fingerprints.into_iter().collect::<Vec<_>>().join(",");
    let dir = config.out.join("report");
    let written = write_bundle(&bundle, &dir)?;
    println!("{}", render_markdown(&bundle, TableKind::Metrics)?);
    for file in written {
        println!("wrote {}", dir.join(file).display());
    }
    Ok(())
}
