//! Scripted in-process provider for tests and offline runs.
//!
//! A script maps `(strategy, name, stage)` to an ordered list of replies.
//! Each call consumes the next reply for its key; the last one repeats once
//! the list is exhausted, so `[fault, fault, text]` fails twice and then
//! succeeds forever. `"*"` (or an omitted stage) matches anything; the most
//! specific entry wins (name over strategy over stage), then file order.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "latency_ms": { "min": 5, "max": 20 },
//!   "default": { "text": "[\"Japanese\"]" },
//!   "entries": [
//!     { "strategy": "zero_shot", "name": "Taro Yamada", "stage": 0,
//!       "responses": [{ "fault": "http_error" }, { "text": "[\"Japanese\"]" }] }
//!   ]
//! }
//! ```

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use natpred_core::features::fnv1a64;
use natpred_core::rng::{derive_seed_u64, SplitMix64};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::{ChatProvider, ChatRequest, ProviderError, RequestTag};

pub const WILDCARD: &str = "*";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Timeout,
    HttpError,
    /// The provider returns a body it cannot decode.
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockReply {
    Text(String),
    Fault(FaultKind),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySpec {
    pub min: u64,
    pub max: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default = "wildcard")]
    pub strategy: String,
    #[serde(default = "wildcard")]
    pub name: String,
    #[serde(default)]
    pub stage: Option<usize>,
    pub responses: Vec<MockReply>,
}

fn wildcard() -> String {
    WILDCARD.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub latency_ms: LatencySpec,
    pub default: MockReply,
    #[serde(default)]
    pub entries: Vec<ScriptEntry>,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read mock script {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid mock script: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid mock script: {0}")]
    Invalid(String),
}

impl MockScript {
    pub fn always(text: impl Into<String>) -> Self {
        Self {
            seed: 0,
            latency_ms: LatencySpec::default(),
            default: MockReply::Text(text.into()),
            entries: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScriptError> {
        let script: Self = serde_json::from_str(text)?;
        script.validate()?;
        Ok(script)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScriptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        if self.latency_ms.min > self.latency_ms.max {
            return Err(ScriptError::Invalid(format!(
                "latency min {} exceeds max {}",
                self.latency_ms.min, self.latency_ms.max
            )));
        }
        if let Some(i) = self.entries.iter().position(|e| e.responses.is_empty()) {
            return Err(ScriptError::Invalid(format!("entry {i} has no responses")));
        }
        Ok(())
    }

    pub fn with_entry(
        mut self,
        strategy: &str,
        name: &str,
        stage: Option<usize>,
        responses: Vec<MockReply>,
    ) -> Self {
        self.entries.push(ScriptEntry {
            strategy: strategy.into(),
            name: name.into(),
            stage,
            responses,
        });
        self
    }

    pub fn with_latency(mut self, min: u64, max: u64) -> Self {
        self.latency_ms = LatencySpec { min, max };
        self
    }

    fn lookup(&self, tag: &RequestTag) -> Option<usize> {
        let matches = |field: &str, value: &str| field == WILDCARD || field == value;
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| {
                matches(&e.strategy, &tag.strategy)
                    && matches(&e.name, &tag.name)
                    && e.stage.map_or(true, |s| s == tag.stage)
            })
            .max_by_key(|(i, e)| {
                let score = 4 * usize::from(e.name != WILDCARD)
                    + 2 * usize::from(e.strategy != WILDCARD)
                    + usize::from(e.stage.is_some());
                (score, std::cmp::Reverse(*i))
            })
            .map(|(i, _)| i)
    }
}

pub struct MockProvider {
    script: MockScript,
    cursors: Mutex<HashMap<(Option<usize>, RequestTag), usize>>,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            cursors: Mutex::new(HashMap::new()),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.load(Ordering::SeqCst)
    }

    /// Next scripted reply plus how many times this exact request key has
    /// been seen before.
    fn next_reply(&self, tag: &RequestTag) -> (MockReply, usize) {
        let entry = self.script.lookup(tag);
        let mut cursors = self.cursors.lock().expect("cursor lock");
        // cursors advance per concrete request so a wildcard entry replays
        // its fault sequence for every name
        let cursor = cursors.entry((entry, tag.clone())).or_insert(0);
        let seen = *cursor;
        *cursor += 1;
        let reply = match entry {
            Some(i) => {
                let responses = &self.script.entries[i].responses;
                responses[seen.min(responses.len() - 1)].clone()
            }
            None => self.script.default.clone(),
        };
        (reply, seen)
    }

    fn latency(&self, tag: &RequestTag, seen: usize) -> Duration {
        let LatencySpec { min, max } = self.script.latency_ms;
        if max == 0 {
            return Duration::ZERO;
        }
        let key = format!("{}\u{1f}{}\u{1f}{}", tag.strategy, tag.name, tag.stage);
        let mut rng = SplitMix64::new(derive_seed_u64(
            self.script.seed ^ fnv1a64(key.as_bytes()),
            seen as u64,
        ));
        Duration::from_millis(min + rng.below(max - min + 1))
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

#[async_trait]
impl ChatProvider for MockProvider {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlight(&self.in_flight);
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        let (reply, seen) = self.next_reply(&request.tag);
        let delay = self.latency(&request.tag, seen);
        if !delay.is_zero() {
            tokio::time::sleep(delay).await;
        }
        match reply {
            MockReply::Text(t) => Ok(t),
            MockReply::Fault(FaultKind::Timeout) => Err(ProviderError::Timeout),
            MockReply::Fault(FaultKind::HttpError) => Err(ProviderError::Http { status: 500 }),
            MockReply::Fault(FaultKind::Malformed) => {
                Err(ProviderError::Malformed("scripted malformed body".into()))
            }
        }
    }
}
