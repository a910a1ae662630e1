//! Declarative run configuration.
//!
//! A JSON file with every field optional; omitted fields take the defaults
//! below. `${VAR}` references are resolved from the environment only in
//! `llm.api_key`, and only when the HTTP provider is built, so secrets never
//! land in output files and mock runs never need them.
//!
//! Component seeds come from the single run seed: the split uses it as is,
//! the SVM uses `derive_seed(seed, "svm")` and the shallow model
//! `derive_seed(seed, "fasttext")`.

use std::path::{Path, PathBuf};

use natpred_core::dataset::PreprocessConfig;
use natpred_core::features::NgramConfig;
use natpred_core::linear_model::LinearTrainConfig;
use natpred_core::rng::derive_seed;
use natpred_core::shallow_model::ShallowConfig;
use natpred_llm::{RunPolicy, StrategyParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output root; not part of the fingerprint.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    pub data: DataConfig,
    pub preprocess: PreprocessSection,
    pub svm: SvmConfig,
    pub fasttext: FastTextConfig,
    pub llm: LlmConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            data: DataConfig::default(),
            preprocess: PreprocessSection::default(),
            svm: SvmConfig::default(),
            fasttext: FastTextConfig::default(),
            llm: LlmConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Raw corpus: `name<TAB>nationality` lines or the JSON name map.
    pub raw: PathBuf,
    /// Taxonomy TSV; the built-in mapping when absent.
    pub taxonomy: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            raw: PathBuf::from("data/name2nat/train.tsv"),
            taxonomy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub min_samples: usize,
    pub cap: usize,
    pub ratios: (f64, f64, f64),
}

impl Default for PreprocessSection {
    fn default() -> Self {
        let d = PreprocessConfig::default();
        Self {
            min_samples: d.min_samples,
            cap: d.cap,
            ratios: d.ratios,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub ngram: NgramConfig,
    pub c: f64,
    pub epochs: usize,
    pub tolerance: f64,
    pub t0: Option<f64>,
}

impl Default for SvmConfig {
    fn default() -> Self {
        let d = LinearTrainConfig::default();
        Self {
            ngram: NgramConfig::tfidf_default(),
            c: d.c,
            epochs: d.epochs,
            tolerance: d.tolerance,
            t0: d.t0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FastTextConfig {
    pub ngram: NgramConfig,
    pub dim: usize,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for FastTextConfig {
    fn default() -> Self {
        let d = ShallowConfig::default();
        Self {
            ngram: d.ngram,
            dim: d.dim,
            lr: d.lr,
            epochs: d.epochs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    Http,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mock" => Ok(Self::Mock),
            "http" => Ok(Self::Http),
            other => Err(format!(
                "unknown provider `{other}` (expected mock or http)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub strategy: String,
    pub provider: ProviderKind,
    pub granularity: String,
    /// Mock script path.
    pub script: Option<PathBuf>,
    pub endpoint: String,
    /// A literal token or a `${VAR}` reference. Never serialised.
    #[serde(skip_serializing)]
    pub api_key: String,
    pub timeout_secs: u64,
    /// Run only the first `limit` names of the split.
    pub limit: Option<usize>,
    pub params: StrategyParams,
    pub policy: RunPolicy,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            strategy: "zero_shot".into(),
            provider: ProviderKind::Mock,
            granularity: "nationality".into(),
            script: None,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key: "${OPENAI_API_KEY}".into(),
            timeout_secs: 60,
            limit: None,
            params: StrategyParams::default(),
            policy: RunPolicy::default(),
        }
    }
}

impl LlmConfig {
    /// Resolves `api_key`, reading the environment for a `${VAR}` reference.
    pub fn resolve_api_key(&self) -> Result<String, natpred_llm::ProviderError> {
        match env_reference(&self.api_key) {
            Some(var) => std::env::var(var)
                .ok()
                .filter(|v| !v.trim().is_empty())
                .ok_or_else(|| natpred_llm::ProviderError::MissingCredential(var.to_string())),
            None if self.api_key.trim().is_empty() => Err(
                natpred_llm::ProviderError::MissingCredential("llm.api_key".into()),
            ),
            None => Ok(self.api_key.clone()),
        }
    }
}

fn env_reference(value: &str) -> Option<&str> {
    value
        .strip_prefix("${")?
        .strip_suffix('}')
        .filter(|v| !v.is_empty())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub confusion_top_n: usize,
    pub matrix_top_n: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![1, 3, 5],
            confusion_top_n: 10,
            matrix_top_n: 15,
        }
    }
}

impl RunConfig {
    /// Reads `path`, or the defaults when `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        check_interpolation(&value, "")?;
        let config: Self =
            serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.preprocess_config().validate()?;
        self.svm.ngram.validate()?;
        if !(self.svm.c > 0.0 && self.svm.c.is_finite()) {
            return Err(CliError::Config(format!(
                "svm.c must be > 0, got {}",
                self.svm.c
            )));
        }
        if self.svm.ngram.hashing_buckets.is_some() {
            return Err(CliError::Config(
                "svm.ngram must not set hashing_buckets".into(),
            ));
        }
        self.shallow_config().validate()?;
        self.llm
            .strategy
            .parse::<natpred_llm::StrategyKind>()
            .map_err(CliError::Config)?;
        self.llm
            .granularity
            .parse::<natpred_core::taxonomy::Granularity>()
            .map_err(CliError::Config)?;
        self.llm.policy.validate()?;
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(CliError::Config(format!(
                "eval.ks must be non-empty and >= 1, got {:?}",
                self.eval.ks
            )));
        }
        Ok(())
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        let p = &self.preprocess;
        PreprocessConfig {
            min_samples: p.min_samples,
            cap: p.cap,
            ratios: p.ratios,
            seed: self.seed,
        }
    }

    pub fn linear_config(&self) -> LinearTrainConfig {
        let s = &self.svm;
        LinearTrainConfig {
            c: s.c,
            epochs: s.epochs,
            seed: derive_seed(self.seed, "svm"),
            tolerance: s.tolerance,
            t0: s.t0,
        }
    }

    pub fn shallow_config(&self) -> ShallowConfig {
        let f = &self.fasttext;
        ShallowConfig {
            ngram: f.ngram.clone(),
            dim: f.dim,
            lr: f.lr,
            epochs: f.epochs,
            seed: derive_seed(self.seed, "fasttext"),
        }
    }

    /// The config as recorded in outputs: no output path, no secret.
    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }

    /// SHA-256 of [`RunConfig::to_value`].
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_value().to_string().as_bytes()))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    pub fn model_dir(&self, model: &str) -> PathBuf {
        self.out.join("models").join(model)
    }

    pub fn predictions_dir(&self) -> PathBuf {
        self.out.join("predictions")
    }
}

/// Rejects `${...}` anywhere except `llm.api_key`.
fn check_interpolation(value: &serde_json::Value, at: &str) -> Result<(), CliError> {
    match value {
        serde_json::Value::String(s) if s.contains("${") && at != "llm.api_key" => {
            Err(CliError::Config(format!(
                "`{at}`: environment interpolation is only allowed in llm.api_key"
            )))
        }
        serde_json::Value::Array(items) => items
            .iter()
            .enumerate()
            .try_for_each(|(i, v)| check_interpolation(v, &format!("{at}[{i}]"))),
        serde_json::Value::Object(map) => map.iter().try_for_each(|(k, v)| {
            let path = if at.is_empty() {
                k.clone()
            } else {
                format!("{at}.{k}")
            };
            check_interpolation(v, &path)
        }),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let config = RunConfig::from_json("{}").unwrap();
        assert_eq!(config, RunConfig::default());
        assert_eq!(config.preprocess_config(), PreprocessConfig::default());
        let again = RunConfig::from_json(&config.to_value().to_string()).unwrap();
        assert_eq!(again.fingerprint(), config.fingerprint());
    }

    #[test]
    fn interpolation_is_for_secrets_only() {
        let err = RunConfig::from_json(r#"{"data": {"raw": "${HOME}/x.tsv"}}"#).unwrap_err();
        assert!(matches!(err, CliError::Config(m) if m.contains("data.raw")));
        let config =
            RunConfig::from_json(r#"{"llm": {"api_key": "${NATPRED_UNSET_TOKEN_VAR}"}}"#).unwrap();
        assert_eq!(
            config.llm.resolve_api_key(),
            Err(natpred_llm::ProviderError::MissingCredential(
                "NATPRED_UNSET_TOKEN_VAR".into()
            ))
        );
        assert!(!config
            .to_value()
            .to_string()
            .contains("NATPRED_UNSET_TOKEN_VAR"));
    }

    #[test]
    fn output_root_does_not_change_fingerprint() {
        let a = RunConfig::default();
        let b = RunConfig {
            out: PathBuf::from("/elsewhere"),
            ..RunConfig::default()
        };
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in [
            r#"{"preprocess": {"ratios": [0.5, 0.5, 0.5]}}"#,
            r#"{"svm": {"c": 0}}"#,
            r#"{"llm": {"strategy": "tree_of_thought"}}"#,
            r#"{"eval": {"ks": [0]}}"#,
            r#"{"unknown_section": 1}"#,
            "not json",
        ] {
            assert!(
                matches!(RunConfig::from_json(text), Err(CliError::Config(_))),
                "{text}"
            );
        }
    }
}
