//! The six prompting strategies and the bounded-concurrency batch runner.

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::stream::{self, StreamExt};
use natpred_core::dataset::NameRecord;
use natpred_core::evaluation::{Prediction, PredictionFlags};
use natpred_core::features::fnv1a64;
use natpred_core::rng::{derive_seed_u64, SplitMix64};
use natpred_core::taxonomy::{Granularity, LabelSpace, Taxonomy, REGION_TABLE};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parse::{parse_with, LabelMatcher, MAX_LABELS};
use crate::prompts;
use crate::provider::{ChatMessage, ChatProvider, ChatRequest, RequestTag};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OrchestratorError {
    #[error("few-shot examples must cover each of the 14 regions exactly once: {0}")]
    BadExampleSet(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("invalid policy: {0}")]
    Policy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    ZeroShot,
    FewShot,
    ChainOfThought,
    SelfConsistency,
    LeastToMost,
    SelfReflection,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        Self::ZeroShot,
        Self::FewShot,
        Self::ChainOfThought,
        Self::SelfConsistency,
        Self::LeastToMost,
        Self::SelfReflection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ZeroShot => "zero_shot",
            Self::FewShot => "few_shot",
            Self::ChainOfThought => "chain_of_thought",
            Self::SelfConsistency => "self_consistency",
            Self::LeastToMost => "least_to_most",
            Self::SelfReflection => "self_reflection",
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == wanted)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|k| k.as_str()).collect();
                format!(
                    "unknown strategy `{s}` (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyParams {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Samples drawn by self-consistency.
    pub n_samples: usize,
}

impl Default for StrategyParams {
    fn default() -> Self {
        Self {
            model: "gpt-4.1-mini".into(),
            temperature: 1.0,
            max_output_tokens: 256,
            n_samples: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Backoff {
    pub base_ms: u64,
    pub factor: f64,
    /// Scale each delay by a seeded factor in `[0.5, 1.0)`.
    pub jitter: bool,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            base_ms: 500,
            factor: 2.0,
            jitter: false,
        }
    }
}

impl Backoff {
    /// Delay before retry number `attempt + 1`: `base · factor^attempt`.
    pub fn delay(&self, attempt: u32, jitter_seed: u64) -> Duration {
        let mut ms = self.base_ms as f64 * self.factor.powi(attempt as i32);
        if self.jitter {
            ms *= 0.5
                + 0.5 * SplitMix64::new(derive_seed_u64(jitter_seed, attempt as u64)).next_f64();
        }
        Duration::from_secs_f64(ms / 1000.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunPolicy {
    pub max_concurrency: usize,
    pub max_retries: u32,
    pub backoff: Backoff,
}

impl Default for RunPolicy {
    fn default() -> Self {
        Self {
            max_concurrency: 50,
            max_retries: 3,
            backoff: Backoff::default(),
        }
    }
}

impl RunPolicy {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.max_concurrency == 0 {
            return Err(OrchestratorError::Policy(
                "max_concurrency must be >= 1".into(),
            ));
        }
        if self.backoff.factor.is_nan() || self.backoff.factor < 1.0 {
            return Err(OrchestratorError::Policy(
                "backoff factor must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub name: String,
    pub label: String,
}

/// Checks that `examples` hold exactly one nationality from each region.
pub fn validate_examples(
    examples: &[FewShotExample],
    taxonomy: &Taxonomy,
) -> Result<(), OrchestratorError> {
    let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
    for ex in examples {
        let region = taxonomy
            .project(&ex.label, Granularity::Region)
            .map_err(|_| {
                OrchestratorError::BadExampleSet(format!("`{}` is not a nationality", ex.label))
            })?;
        if let Some(prev) = seen.insert(region, &ex.label) {
            return Err(OrchestratorError::BadExampleSet(format!(
                "{region} appears twice ({prev}, {})",
                ex.label
            )));
        }
    }
    let missing: Vec<&str> = taxonomy
        .label_space(Granularity::Region)
        .labels()
        .iter()
        .map(String::as_str)
        .filter(|r| !seen.contains_key(r))
        .collect();
    if !missing.is_empty() || examples.len() != REGION_TABLE.len() {
        return Err(OrchestratorError::BadExampleSet(format!(
            "missing regions: {}",
            missing.join(", ")
        )));
    }
    Ok(())
}

/// Per region, the nationality with the most training names (ties by
/// label) paired with its lexicographically first training name.
pub fn default_fewshot_examples(train: &[NameRecord], taxonomy: &Taxonomy) -> Vec<FewShotExample> {
    let mut count: HashMap<&str, usize> = HashMap::new();
    let mut first_name: HashMap<&str, &str> = HashMap::new();
    for r in train {
        *count.entry(&r.nationality).or_default() += 1;
        let slot = first_name.entry(&r.nationality).or_insert(&r.name);
        if r.name.as_str() < *slot {
            *slot = &r.name;
        }
    }
    taxonomy
        .label_space(Granularity::Region)
        .labels()
        .iter()
        .filter_map(|region| {
            let best = taxonomy
                .nationalities_of(region)
                .into_iter()
                .filter(|n| count.contains_key(n))
                .max_by(|a, b| count[a].cmp(&count[b]).then(b.cmp(a)))?;
            Some(FewShotExample {
                name: first_name[best].to_string(),
                label: best.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: usize,
    pub messages: Vec<ChatMessage>,
    /// Text of every reply received, one per successful call.
    pub responses: Vec<String>,
    /// Provider failures, one per failed call.
    pub errors: Vec<String>,
    pub parsed: Vec<String>,
    pub parse_error: bool,
    /// The stage ended without a usable reply.
    pub failed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFlags {
    pub retries_used: u32,
    pub unknown: bool,
    pub parse_error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRun {
    pub name: String,
    pub strategy: StrategyKind,
    pub prompt_version: String,
    pub stages: Vec<StageTrace>,
    pub predicted: Vec<String>,
    pub flags: RunFlags,
    pub latency_ms: u64,
}

impl PromptRun {
    pub fn to_prediction(&self, true_label: impl Into<String>) -> Prediction {
        Prediction {
            name: self.name.clone(),
            true_label: true_label.into(),
            predicted: self.predicted.clone(),
            scores: None,
            strategy: self.strategy.as_str().into(),
            flags: PredictionFlags {
                unknown: self.flags.unknown,
                parse_error: self.flags.parse_error,
                retries_used: self.flags.retries_used,
            },
        }
    }

    pub fn requests(&self) -> usize {
        self.stages
            .iter()
            .map(|s| s.responses.len() + s.errors.len())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub n: usize,
    pub unknown: usize,
    pub unknown_rate: f64,
    pub parse_errors: usize,
    pub requests: usize,
    /// retries used by a run -> number of runs
    pub retry_histogram: BTreeMap<u32, usize>,
}

impl BatchSummary {
    pub fn of(runs: &[PromptRun]) -> Self {
        let mut retry_histogram = BTreeMap::new();
        for r in runs {
            *retry_histogram.entry(r.flags.retries_used).or_insert(0) += 1;
        }
        let unknown = runs.iter().filter(|r| r.flags.unknown).count();
        Self {
            n: runs.len(),
            unknown,
            unknown_rate: if runs.is_empty() {
                0.0
            } else {
                unknown as f64 / runs.len() as f64
            },
            parse_errors: runs.iter().filter(|r| r.flags.parse_error).count(),
            requests: runs.iter().map(PromptRun::requests).sum(),
            retry_histogram,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub runs: Vec<PromptRun>,
    pub summary: BatchSummary,
}

/// Ranks self-consistency samples: top-1 votes desc, then mean rank over
/// the lists a label appears in, then label.
pub fn aggregate_samples(samples: &[Vec<String>]) -> Vec<String> {
    let mut votes: HashMap<&str, usize> = HashMap::new();
    let mut ranks: HashMap<&str, (usize, usize)> = HashMap::new();
    for list in samples {
        if let Some(top) = list.first() {
            *votes.entry(top).or_default() += 1;
        }
        for (i, label) in list.iter().enumerate() {
            let e = ranks.entry(label).or_default();
            e.0 += i + 1;
            e.1 += 1;
        }
    }
    let mut labels: Vec<(&str, usize, f64)> = ranks
        .iter()
        .map(|(l, (sum, n))| {
            (
                *l,
                votes.get(l).copied().unwrap_or(0),
                *sum as f64 / *n as f64,
            )
        })
        .collect();
    labels.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(b.0)));
    labels
        .into_iter()
        .take(MAX_LABELS)
        .map(|(l, _, _)| l.to_string())
        .collect()
}

pub struct Orchestrator {
    provider: Arc<dyn ChatProvider>,
    taxonomy: Arc<Taxonomy>,
    granularity: Granularity,
    params: StrategyParams,
    policy: RunPolicy,
    fewshot: Vec<FewShotExample>,
}

struct StageRequest<'a> {
    strategy: StrategyKind,
    name: &'a str,
    stage: usize,
    messages: Vec<ChatMessage>,
    matcher: &'a LabelMatcher,
    limit: usize,
}

impl Orchestrator {
    pub fn new(
        provider: Arc<dyn ChatProvider>,
        taxonomy: Arc<Taxonomy>,
        granularity: Granularity,
        params: StrategyParams,
        policy: RunPolicy,
    ) -> Result<Self, OrchestratorError> {
        policy.validate()?;
        if params.n_samples == 0 {
            return Err(OrchestratorError::Policy("n_samples must be >= 1".into()));
        }
        Ok(Self {
            provider,
            taxonomy,
            granularity,
            params,
            policy,
            fewshot: Vec::new(),
        })
    }

    pub fn with_fewshot(
        mut self,
        examples: Vec<FewShotExample>,
    ) -> Result<Self, OrchestratorError> {
        validate_examples(&examples, &self.taxonomy)?;
        self.fewshot = examples;
        Ok(self)
    }

    pub fn label_space(&self) -> &LabelSpace {
        self.taxonomy.label_space(self.granularity)
    }

    fn system_prompt(&self, template: &str) -> String {
        let labels = self.label_space().labels();
        let count = labels.len().to_string();
        let list = prompts::label_list(labels);
        let a = labels.first().map(String::as_str).unwrap_or("");
        let b = labels.get(1).map(String::as_str).unwrap_or(a);
        prompts::render(
            template,
            &[
                ("count", &count),
                ("labels", &list),
                ("example_a", a),
                ("example_b", b),
            ],
        )
    }

    fn user_prompt(name: &str) -> String {
        prompts::render(prompts::USER, &[("name", name)])
    }

    /// Sends one stage, retrying provider failures and replies without a
    /// JSON array until the retry budget is spent.
    async fn ask(&self, req: StageRequest<'_>, flags: &mut RunFlags) -> StageTrace {
        let request = ChatRequest {
            model: self.params.model.clone(),
            messages: req.messages,
            temperature: self.params.temperature,
            max_tokens: self.params.max_output_tokens,
            tag: RequestTag {
                strategy: req.strategy.as_str().into(),
                name: req.name.into(),
                stage: req.stage,
            },
        };
        let mut trace = StageTrace {
            stage: req.stage,
            messages: request.messages.clone(),
            responses: Vec::new(),
            errors: Vec::new(),
            parsed: Vec::new(),
            parse_error: false,
            failed: true,
        };
        let jitter_seed =
            fnv1a64(format!("{}\u{1f}{}\u{1f}{}", req.strategy, req.name, req.stage).as_bytes());
        let mut attempt = 0u32;
        loop {
            let retryable = match self.provider.complete(&request).await {
                Ok(text) => {
                    let parsed = parse_with(&text, req.matcher, req.limit);
                    trace.responses.push(text);
                    trace.parsed = parsed.labels;
                    trace.parse_error = parsed.parse_error;
                    trace.failed = parsed.parse_error;
                    parsed.parse_error
                }
                Err(e) => {
                    trace.errors.push(e.to_string());
                    trace.failed = true;
                    e.is_retryable()
                }
            };
            if !trace.failed || !retryable || attempt >= self.policy.max_retries {
                return trace;
            }
            tokio::time::sleep(self.policy.backoff.delay(attempt, jitter_seed)).await;
            attempt += 1;
            flags.retries_used += 1;
        }
    }

    fn finish(
        name: &str,
        strategy: StrategyKind,
        stages: Vec<StageTrace>,
        predicted: Vec<String>,
        mut flags: RunFlags,
        start: Instant,
    ) -> PromptRun {
        flags.unknown = predicted.is_empty();
        PromptRun {
            name: name.into(),
            strategy,
            prompt_version: prompts::PROMPT_VERSION.into(),
            stages,
            predicted,
            flags,
            latency_ms: start.elapsed().as_millis() as u64,
        }
    }

    fn zero_shot_messages(&self, name: &str) -> Vec<ChatMessage> {
        vec![
            ChatMessage::system(self.system_prompt(prompts::SYSTEM)),
            ChatMessage::user(Self::user_prompt(name)),
        ]
    }

    async fn single_stage(
        &self,
        kind: StrategyKind,
        name: &str,
        messages: Vec<ChatMessage>,
    ) -> PromptRun {
        let start = Instant::now();
        let matcher = LabelMatcher::new(self.label_space());
        let mut flags = RunFlags::default();
        let trace = self
            .ask(
                StageRequest {
                    strategy: kind,
                    name,
                    stage: 0,
                    messages,
                    matcher: &matcher,
                    limit: MAX_LABELS,
                },
                &mut flags,
            )
            .await;
        flags.parse_error = trace.parse_error;
        let predicted = if trace.failed {
            Vec::new()
        } else {
            trace.parsed.clone()
        };
        Self::finish(name, kind, vec![trace], predicted, flags, start)
    }

    pub async fn run_zero_shot(&self, name: &str) -> PromptRun {
        self.single_stage(StrategyKind::ZeroShot, name, self.zero_shot_messages(name))
            .await
    }

    pub async fn run_few_shot(&self, name: &str) -> Result<PromptRun, OrchestratorError> {
        if self.fewshot.is_empty() {
            return Err(OrchestratorError::BadExampleSet(
                "no examples configured".into(),
            ));
        }
        let mut lines = Vec::with_capacity(self.fewshot.len());
        for ex in &self.fewshot {
            let shown = self
                .taxonomy
                .project(&ex.label, self.granularity)
                .map_err(|e| OrchestratorError::BadExampleSet(e.to_string()))?;
            lines.push(format!("{} → {}", ex.name, shown));
        }
        let intro = prompts::render(prompts::FEW_SHOT_INTRO, &[("examples", &lines.join("\n"))]);
        let system = format!("{}\n\n{}", self.system_prompt(prompts::SYSTEM), intro);
        let messages = vec![
            ChatMessage::system(system),
            ChatMessage::user(Self::user_prompt(name)),
        ];
        Ok(self
            .single_stage(StrategyKind::FewShot, name, messages)
            .await)
    }

    pub async fn run_chain_of_thought(&self, name: &str) -> PromptRun {
        let messages = vec![
            ChatMessage::system(self.system_prompt(prompts::CHAIN_OF_THOUGHT)),
            ChatMessage::user(Self::user_prompt(name)),
        ];
        self.single_stage(StrategyKind::ChainOfThought, name, messages)
            .await
    }

    pub async fn run_self_consistency(&self, name: &str) -> PromptRun {
        let start = Instant::now();
        let kind = StrategyKind::SelfConsistency;
        let matcher = LabelMatcher::new(self.label_space());
        let mut flags = RunFlags::default();
        let mut stages = Vec::with_capacity(self.params.n_samples);
        for stage in 0..self.params.n_samples {
            let req = StageRequest {
                strategy: kind,
                name,
                stage,
                messages: self.zero_shot_messages(name),
                matcher: &matcher,
                limit: MAX_LABELS,
            };
            stages.push(self.ask(req, &mut flags).await);
        }
        let samples: Vec<Vec<String>> = stages
            .iter()
            .filter(|s| !s.failed)
            .map(|s| s.parsed.clone())
            .collect();
        flags.parse_error = stages.iter().all(|s| s.parse_error);
        Self::finish(
            name,
            kind,
            stages,
            aggregate_samples(&samples),
            flags,
            start,
        )
    }

    /// Continent, then region, then nationality; each stage's candidates
    /// come from the previous choice. Short regions are padded from sibling
    /// regions in the order stage 2 ranked them, then alphabetically.
    pub async fn run_least_to_most(&self, name: &str) -> Result<PromptRun, OrchestratorError> {
        if self.granularity != Granularity::Nationality {
            return Err(OrchestratorError::Unsupported(
                "least_to_most predicts nationalities only".into(),
            ));
        }
        let start = Instant::now();
        let kind = StrategyKind::LeastToMost;
        let tax = &self.taxonomy;
        let mut flags = RunFlags::default();
        let mut stages = Vec::with_capacity(3);
        let user = ChatMessage::user(Self::user_prompt(name));
        let stage_messages = |template: &str, candidates: &[&str], parent: &str| {
            let list = prompts::label_list(candidates);
            let system = prompts::render(
                template,
                &[
                    ("labels", &list),
                    ("parent", parent),
                    ("example_a", candidates[0]),
                ],
            );
            vec![ChatMessage::system(system), user.clone()]
        };

        let continents: Vec<&str> = tax
            .label_space(Granularity::Continent)
            .labels()
            .iter()
            .map(String::as_str)
            .collect();
        let matcher = LabelMatcher::from_labels(continents.iter().copied());
        let req = StageRequest {
            strategy: kind,
            name,
            stage: 0,
            messages: stage_messages(prompts::L2M_CONTINENT, &continents, ""),
            matcher: &matcher,
            limit: 1,
        };
        let t = self.ask(req, &mut flags).await;
        let continent = t.parsed.first().cloned().filter(|_| !t.failed);
        let failed_parse = t.parse_error;
        stages.push(t);
        let Some(continent) = continent else {
            flags.parse_error = failed_parse;
            return Ok(Self::finish(name, kind, stages, Vec::new(), flags, start));
        };

        let regions = tax.regions_of(&continent);
        let matcher = LabelMatcher::from_labels(regions.iter().copied());
        let req = StageRequest {
            strategy: kind,
            name,
            stage: 1,
            messages: stage_messages(prompts::L2M_REGION, &regions, &continent),
            matcher: &matcher,
            limit: regions.len(),
        };
        let t = self.ask(req, &mut flags).await;
        let ranked_regions = if t.failed {
            Vec::new()
        } else {
            t.parsed.clone()
        };
        let failed_parse = t.parse_error;
        stages.push(t);
        let Some(region) = ranked_regions.first().cloned() else {
            flags.parse_error = failed_parse;
            return Ok(Self::finish(name, kind, stages, Vec::new(), flags, start));
        };

        let nationalities = tax.nationalities_of(&region);
        let matcher = LabelMatcher::from_labels(nationalities.iter().copied());
        let req = StageRequest {
            strategy: kind,
            name,
            stage: 2,
            messages: stage_messages(prompts::L2M_NATIONALITY, &nationalities, &region),
            matcher: &matcher,
            limit: MAX_LABELS,
        };
        let t = self.ask(req, &mut flags).await;
        let mut predicted = if t.failed {
            Vec::new()
        } else {
            t.parsed.clone()
        };
        flags.parse_error = t.parse_error;
        stages.push(t);
        if !predicted.is_empty() {
            let mut siblings: Vec<&str> = ranked_regions[1..].iter().map(String::as_str).collect();
            siblings.extend(
                regions
                    .iter()
                    .copied()
                    .filter(|r| !ranked_regions.iter().any(|x| x == r)),
            );
            for label in siblings.into_iter().flat_map(|r| tax.nationalities_of(r)) {
                if predicted.len() >= MAX_LABELS {
                    break;
                }
                predicted.push(label.to_string());
            }
        }
        Ok(Self::finish(name, kind, stages, predicted, flags, start))
    }

    /// Zero-shot, then a critique turn. A failed second turn falls back to
    /// the first answer and sets `parse_error`.
    pub async fn run_self_reflection(&self, name: &str) -> PromptRun {
        let start = Instant::now();
        let kind = StrategyKind::SelfReflection;
        let matcher = LabelMatcher::new(self.label_space());
        let mut flags = RunFlags::default();
        let first_messages = self.zero_shot_messages(name);
        let req = StageRequest {
            strategy: kind,
            name,
            stage: 0,
            messages: first_messages.clone(),
            matcher: &matcher,
            limit: MAX_LABELS,
        };
        let first = self.ask(req, &mut flags).await;
        if first.failed {
            flags.parse_error = first.parse_error;
            return Self::finish(name, kind, vec![first], Vec::new(), flags, start);
        }
        let mut messages = first_messages;
        messages.push(ChatMessage::assistant(
            first.responses.last().cloned().unwrap_or_default(),
        ));
        messages.push(ChatMessage::user(prompts::render(
            prompts::REFLECT,
            &[("name", name)],
        )));
        let req = StageRequest {
            strategy: kind,
            name,
            stage: 1,
            messages,
            matcher: &matcher,
            limit: MAX_LABELS,
        };
        let second = self.ask(req, &mut flags).await;
        let predicted = if second.failed || second.parsed.is_empty() {
            flags.parse_error = second.failed;
            first.parsed.clone()
        } else {
            second.parsed.clone()
        };
        Self::finish(name, kind, vec![first, second], predicted, flags, start)
    }

    pub async fn run(
        &self,
        kind: StrategyKind,
        name: &str,
    ) -> Result<PromptRun, OrchestratorError> {
        Ok(match kind {
            StrategyKind::ZeroShot => self.run_zero_shot(name).await,
            StrategyKind::FewShot => self.run_few_shot(name).await?,
            StrategyKind::ChainOfThought => self.run_chain_of_thought(name).await,
            StrategyKind::SelfConsistency => self.run_self_consistency(name).await,
            StrategyKind::LeastToMost => self.run_least_to_most(name).await?,
            StrategyKind::SelfReflection => self.run_self_reflection(name).await,
        })
    }

    /// Runs every name with at most `max_concurrency` runs (and therefore
    /// requests) in flight. Output order is input order.
    pub async fn run_batch<S: AsRef<str>>(
        &self,
        names: &[S],
        kind: StrategyKind,
    ) -> Result<BatchResult, OrchestratorError> {
        match kind {
            StrategyKind::FewShot if self.fewshot.is_empty() => {
                return Err(OrchestratorError::BadExampleSet(
                    "no examples configured".into(),
                ))
            }
            StrategyKind::LeastToMost if self.granularity != Granularity::Nationality => {
                return Err(OrchestratorError::Unsupported(
                    "least_to_most predicts nationalities only".into(),
                ))
            }
            _ => {}
        }
        let runs: Vec<PromptRun> = stream::iter(names.iter().map(|n| self.run(kind, n.as_ref())))
            .buffered(self.policy.max_concurrency)
            .collect::<Vec<_>>()
            .await
            .into_iter()
            .collect::<Result<_, _>>()?;
        let summary = BatchSummary::of(&runs);
        Ok(BatchResult { runs, summary })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn unanimous_samples_keep_their_list() {
        let list = l(&["Japanese", "Chinese", "Korean", "Taiwanese", "Vietnamese"]);
        assert_eq!(aggregate_samples(&vec![list.clone(); 5]), list);
        assert_eq!(aggregate_samples(std::slice::from_ref(&list)), list);
    }

    #[test]
    fn tied_votes_fall_back_to_mean_rank() {
        // votes A:2, B:2, C:1; A mean rank 1.0, B mean rank 1.5
        let samples = vec![
            l(&["A", "C"]),
            l(&["A", "B"]),
            l(&["B", "C"]),
            l(&["B", "C"]),
            l(&["C", "B"]),
        ];
        let got = aggregate_samples(&samples);
        assert_eq!(got[..3], l(&["A", "B", "C"])[..]);
        let majority = vec![l(&["A"]), l(&["B"]), l(&["A"]), l(&["B"]), l(&["A"])];
        assert_eq!(aggregate_samples(&majority)[0], "A");
        assert!(aggregate_samples(&[]).is_empty());
    }

    #[test]
    fn backoff_grows_without_jitter() {
        let b = Backoff {
            base_ms: 10,
            factor: 2.0,
            jitter: false,
        };
        let d: Vec<Duration> = (0..4).map(|a| b.delay(a, 0)).collect();
        assert_eq!(d, [10, 20, 40, 80].map(Duration::from_millis));
        let j = Backoff { jitter: true, ..b };
        assert!(
            (0..4).all(|a| j.delay(a, 9) <= d[a as usize] && j.delay(a, 9) >= d[a as usize] / 2)
        );
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.as_str().parse::<StrategyKind>().unwrap(), k);
        }
        assert_eq!(
            "self-consistency".parse::<StrategyKind>().unwrap(),
            StrategyKind::SelfConsistency
        );
        assert!("tree_of_thought".parse::<StrategyKind>().is_err());
    }
}
