//! LLM prompting pipelines for nationality prediction.
//!
//! Six strategies (zero-shot, few-shot, chain-of-thought, self-consistency,
//! least-to-most, self-reflection) run against any [`ChatProvider`]: an
//! OpenAI-style HTTP endpoint or the scripted [`MockProvider`].

pub mod mock;
pub mod orchestrator;
pub mod parse;
pub mod prompts;
pub mod provider;

pub use mock::{FaultKind, MockProvider, MockReply, MockScript};
pub use orchestrator::{
    aggregate_samples, default_fewshot_examples, validate_examples, Backoff, BatchResult,
    BatchSummary, FewShotExample, Orchestrator, OrchestratorError, PromptRun, RunFlags, RunPolicy,
    StageTrace, StrategyKind, StrategyParams,
};
pub use parse::{parse_response, ParsedLabels};
pub use provider::{
    ChatMessage, ChatProvider, ChatRequest, HttpProvider, ProviderError, RequestTag,
};
