//! Run configuration: generation parameters, stage toggles, provider settings,
//! and the pricing rate card.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DataError;

/// Parameters of one generation run. Field names and defaults mirror the
/// engine's public constructor contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// Chat model id used for every generation-side call.
    pub model: String,
    /// Target size of the generated dataset.
    pub generation_number: usize,
    /// Items requested per provider call.
    pub batch_size: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_few_shot_num")]
    pub few_shot_num: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_with_label")]
    pub with_label: bool,
    #[serde(default = "default_max_worker")]
    pub max_worker: usize,
    #[serde(default = "default_embedding_model")]
    pub embedding_model: String,
    /// Optional target label distribution (label → fraction), enforced by
    /// rejecting surplus items at merge time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_ratio: Option<BTreeMap<String, f64>>,
    /// Embedding-distance threshold for group checking. `None` derives the
    /// threshold per run as the 1st percentile of the pairwise distances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dedupe_theta: Option<f64>,
    #[serde(default = "default_reflection_max_epochs")]
    pub reflection_max_epochs: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_temperature() -> f64 {
    1.0
}
fn default_few_shot_num() -> usize {
    5
}
fn default_max_tokens() -> u32 {
    1000
}
fn default_with_label() -> bool {
    true
}
fn default_max_worker() -> usize {
    2
}
fn default_embedding_model() -> String {
    "text-embedding-ada-002".to_string()
}
fn default_reflection_max_epochs() -> u32 {
    3
}

impl GenerationConfig {
    pub fn new(model: impl Into<String>, generation_number: usize, batch_size: usize) -> Self {
        Self {
            model: model.into(),
            generation_number,
            batch_size,
            temperature: default_temperature(),
            few_shot_num: default_few_shot_num(),
            max_tokens: default_max_tokens(),
            with_label: default_with_label(),
            max_worker: default_max_worker(),
            embedding_model: default_embedding_model(),
            label_ratio: None,
            dedupe_theta: None,
            reflection_max_epochs: default_reflection_max_epochs(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.generation_number == 0 {
            return Err(DataError::Config(
                "generation_number must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(DataError::Config("batch_size must be positive".into()));
        }
        if self.batch_size > self.generation_number {
            return Err(DataError::Config(format!(
                "batch_size {} exceeds generation_number {}",
                self.batch_size, self.generation_number
            )));
        }
        if self.temperature < 0.0 {
            return Err(DataError::Config("temperature must be >= 0".into()));
        }
        if self.few_shot_num == 0 {
            return Err(DataError::Config("few_shot_num must be positive".into()));
        }
        if self.max_worker == 0 {
            return Err(DataError::Config("max_worker must be positive".into()));
        }
        if self.reflection_max_epochs == 0 {
            return Err(DataError::Config(
                "reflection_max_epochs must be positive".into(),
            ));
        }
        if let Some(theta) = self.dedupe_theta {
            if theta <= 0.0 {
                return Err(DataError::Config("dedupe_theta must be > 0".into()));
            }
        }
        if let Some(ratio) = &self.label_ratio {
            for (label, frac) in ratio {
                if !(0.0..=1.0).contains(frac) {
                    return Err(DataError::Config(format!(
                        "label_ratio[{label}] = {frac} is not a fraction"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of planned iterations: `ceil(generation_number / batch_size)`.
    pub fn planned_iterations(&self) -> usize {
        self.generation_number.div_ceil(self.batch_size)
    }
}

/// Which pipeline stages run after raw generation. Stages are applied in the
/// declared order; each one is independently toggleable because different
/// dataset types want different treatment (math data wants code verification,
/// knowledge-heavy data wants retrieval validation, benchmark data usually
/// skips difficulty enhancement).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageToggles {
    #[serde(default = "yes")]
    pub attribute_guided: bool,
    #[serde(default = "yes")]
    pub quality_loop: bool,
    /// Code-based label verification. Only applies when the dataset's answer
    /// format is numeric, even when enabled.
    #[serde(default)]
    pub code_verification: bool,
    /// Retrieval-backed fact validation; enable for knowledge-intensive data.
    #[serde(default)]
    pub rag_validation: bool,
    #[serde(default)]
    pub difficulty_enhancement: bool,
    #[serde(default = "yes")]
    pub group_checking: bool,
}

fn yes() -> bool {
    true
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            attribute_guided: true,
            quality_loop: true,
            code_verification: false,
            rag_validation: false,
            difficulty_enhancement: false,
            group_checking: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Deterministic offline provider; no credentials, no network.
    #[default]
    Mock,
    /// Any chat/embeddings HTTP API following the OpenAI wire shape.
    OpenaiCompatible,
}

/// Provider connection settings. The API key itself never appears here — only
/// the name of the environment variable holding it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderConfig {
    #[serde(default)]
    pub kind: ProviderKind,
    #[serde(default = "default_base_url")]
    pub base_url: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_context_window")]
    pub context_window: usize,
}

fn default_base_url() -> String {
    "https://api.openai.com/v1".to_string()
}
fn default_api_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}
fn default_context_window() -> usize {
    128_000
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            base_url: default_base_url(),
            api_key_env: default_api_key_env(),
            context_window: default_context_window(),
        }
    }
}

/// Settings for the solver-program sandbox.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxConfig {
    /// Interpreter command and arguments; the program file path is appended.
    #[serde(default = "default_interpreter")]
    pub interpreter: Vec<String>,
    #[serde(default = "default_sandbox_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_output_cap")]
    pub output_cap_bytes: usize,
}

fn default_interpreter() -> Vec<String> {
    vec!["python3".to_string(), "-I".to_string()]
}
fn default_sandbox_timeout() -> u64 {
    10
}
fn default_output_cap() -> usize {
    64 * 1024
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            interpreter: default_interpreter(),
            timeout_secs: default_sandbox_timeout(),
            output_cap_bytes: default_output_cap(),
        }
    }
}

/// Complete run configuration as read from a config file: the generation
/// parameters plus stage toggles, provider settings, and file paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub generation: GenerationConfig,
    pub dataset_description: String,
    #[serde(default)]
    pub dataset_constraint: Vec<String>,
    #[serde(default)]
    pub dataset_name: String,
    /// User-supplied attributes. When empty and attribute guidance is on, the
    /// attribute pool is extracted from seed examples by the LLM.
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default = "default_few_shot_strategy")]
    pub few_shot_strategy: crate::selector::SelectionStrategy,
    /// Fixed difficulty policy; `None` picks uniformly over the policies
    /// applicable to each item.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty_policy: Option<crate::postprocess::DifficultyPolicy>,
    #[serde(default)]
    pub stages: StageToggles,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub sandbox: SandboxConfig,
    pub seed_dataset: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_card: Option<PathBuf>,
    /// Offline corpus directory for fact validation (one UTF-8 text file per
    /// title, slugified filename). `None` selects the live endpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wiki_corpus: Option<PathBuf>,
    #[serde(default = "default_wiki_base_url")]
    pub wiki_base_url: String,
    /// On-disk embedding cache directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_cache: Option<PathBuf>,
    /// Override directory for prompt template fixtures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
}

fn default_wiki_base_url() -> String {
    "https://en.wikipedia.org/api/rest_v1/page/summary".to_string()
}

fn default_few_shot_strategy() -> crate::selector::SelectionStrategy {
    crate::selector::SelectionStrategy::ClusterDiverse
}

impl RunConfig {
    /// A config with every optional knob at its default.
    pub fn new(
        generation: GenerationConfig,
        dataset_description: impl Into<String>,
        seed_dataset: impl Into<PathBuf>,
    ) -> Self {
        Self {
            generation,
            dataset_description: dataset_description.into(),
            dataset_constraint: Vec::new(),
            dataset_name: String::new(),
            attributes: Vec::new(),
            few_shot_strategy: default_few_shot_strategy(),
            difficulty_policy: None,
            stages: StageToggles::default(),
            provider: ProviderConfig::default(),
            sandbox: SandboxConfig::default(),
            seed_dataset: seed_dataset.into(),
            rate_card: None,
            wiki_corpus: None,
            wiki_base_url: default_wiki_base_url(),
            embedding_cache: None,
            templates_dir: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: RunConfig = serde_json::from_str(&raw).map_err(|e| DataError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        self.generation.validate()?;
        if self.dataset_description.trim().is_empty() {
            return Err(DataError::Config(
                "dataset_description must be nonempty".into(),
            ));
        }
        Ok(())
    }

    /// Apply a `key=value` override for a documented config key.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), DataError> {
        let bad = |e: &dyn std::fmt::Display| DataError::Config(format!("--set {key}: {e}"));
        match key {
            "model" => self.generation.model = value.to_string(),
            "generation_number" => {
                self.generation.generation_number = value.parse().map_err(|e| bad(&e))?
            }
            "batch_size" => self.generation.batch_size = value.parse().map_err(|e| bad(&e))?,
            "temperature" => self.generation.temperature = value.parse().map_err(|e| bad(&e))?,
            "few_shot_num" => self.generation.few_shot_num = value.parse().map_err(|e| bad(&e))?,
            "max_tokens" => self.generation.max_tokens = value.parse().map_err(|e| bad(&e))?,
            "with_label" => self.generation.with_label = value.parse().map_err(|e| bad(&e))?,
            "max_worker" => self.generation.max_worker = value.parse().map_err(|e| bad(&e))?,
            "embedding_model" => self.generation.embedding_model = value.to_string(),
            "dedupe_theta" => {
                self.generation.dedupe_theta = Some(value.parse().map_err(|e| bad(&e))?)
            }
            "reflection_max_epochs" => {
                self.generation.reflection_max_epochs = value.parse().map_err(|e| bad(&e))?
            }
            "seed" => self.generation.seed = value.parse().map_err(|e| bad(&e))?,
            "stages.attribute_guided" => {
                self.stages.attribute_guided = value.parse().map_err(|e| bad(&e))?
            }
            "stages.quality_loop" => {
                self.stages.quality_loop = value.parse().map_err(|e| bad(&e))?
            }
            "stages.code_verification" => {
                self.stages.code_verification = value.parse().map_err(|e| bad(&e))?
            }
            "stages.rag_validation" => {
                self.stages.rag_validation = value.parse().map_err(|e| bad(&e))?
            }
            "stages.difficulty_enhancement" => {
                self.stages.difficulty_enhancement = value.parse().map_err(|e| bad(&e))?
            }
            "stages.group_checking" => {
                self.stages.group_checking = value.parse().map_err(|e| bad(&e))?
            }
            other => {
                return Err(DataError::Config(format!(
                    "unknown config key for --set: {other}"
                )))
            }
        }
        Ok(())
    }
}

/// Per-million-token prices for one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub input_per_mtok: f64,
    pub output_per_mtok: f64,
}

/// Pricing table: model id → rate. Prices drift, so this lives in a config
/// file rather than code; unknown models cost zero and are flagged in reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateCard {
    pub rates: BTreeMap<String, Rate>,
}

impl RateCard {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&raw).map_err(|e| DataError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn insert(&mut self, model: impl Into<String>, input_per_mtok: f64, output_per_mtok: f64) {
        self.rates.insert(
            model.into(),
            Rate {
                input_per_mtok,
                output_per_mtok,
            },
        );
    }

    /// Dollar cost of one call: `prompt·in_rate + completion·out_rate`.
    pub fn cost(&self, model: &str, prompt_tokens: u64, completion_tokens: u64) -> f64 {
        match self.rates.get(model) {
            Some(rate) => {
                prompt_tokens as f64 * rate.input_per_mtok / 1_000_000.0
                    + completion_tokens as f64 * rate.output_per_mtok / 1_000_000.0
            }
            None => 0.0,
        }
    }
}
