//! Domain types, dataset serialization, configuration, and the run manifest.

mod config;
mod dataset;
mod manifest;

pub use config::{
    GenerationConfig, ProviderConfig, ProviderKind, Rate, RateCard, RunConfig, SandboxConfig,
    StageToggles,
};
pub use dataset::{load_dataset, save_dataset, LoadedDataset};
pub use manifest::{
    CallLedger, CallRecord, CostBreakdown, CostGroup, DedupeRemoval, DedupeReport, IterationRecord,
    RunManifest, SharedManifest, Stage,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid config: {0}")]
    Config(String),
}

/// Answer shape shared by every item of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerFormat {
    MultipleChoice,
    Numeric,
    FreeText,
    Boolean,
}

impl AnswerFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            AnswerFormat::MultipleChoice => "multiple_choice",
            AnswerFormat::Numeric => "numeric",
            AnswerFormat::FreeText => "free_text",
            AnswerFormat::Boolean => "boolean",
        }
    }
}

/// One option of a multiple-choice item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub key: String,
    pub body: String,
}

impl Choice {
    pub fn new(key: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            body: body.into(),
        }
    }
}

/// Letter key for choice position `i` when the source had none (A, B, ... Z, K26, ...).
pub(crate) fn auto_choice_key(i: usize) -> String {
    if i < 26 {
        ((b'A' + i as u8) as char).to_string()
    } else {
        format!("K{i}")
    }
}

// The canonical on-disk shape is [{"key","body"}], but seed files and LLM
// payloads also show up as {"A": "...", ...} maps or bare string lists.
fn de_choices<'de, D>(deserializer: D) -> Result<Option<Vec<Choice>>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    use serde::de::Error;
    let value = serde_json::Value::deserialize(deserializer)?;
    choices_from_value(&value)
        .map(Some)
        .map_err(D::Error::custom)
}

/// Convert a JSON value into a choice list, accepting the canonical array of
/// `{key, body}` objects, a key→body map, or a plain string list (auto-keyed).
pub fn choices_from_value(value: &serde_json::Value) -> Result<Vec<Choice>, String> {
    match value {
        serde_json::Value::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, v)| match v {
                serde_json::Value::String(s) => Ok(Choice::new(auto_choice_key(i), s.clone())),
                serde_json::Value::Object(obj) => {
                    let key = obj
                        .get("key")
                        .and_then(|k| k.as_str())
                        .map(str::to_string)
                        .unwrap_or_else(|| auto_choice_key(i));
                    let body = obj
                        .get("body")
                        .or_else(|| obj.get("text"))
                        .and_then(|b| b.as_str())
                        .ok_or_else(|| format!("choice {i} has no body"))?;
                    Ok(Choice::new(key, body))
                }
                other => Err(format!("unsupported choice value: {other}")),
            })
            .collect(),
        serde_json::Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            keys.iter()
                .map(|k| {
                    let body = map[k.as_str()]
                        .as_str()
                        .ok_or_else(|| format!("choice {k} body is not a string"))?;
                    Ok(Choice::new(k.as_str(), body))
                })
                .collect()
        }
        other => Err(format!("unsupported choices value: {other}")),
    }
}

/// One seed or generated record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub id: String,
    pub text: String,
    #[serde(
        default,
        deserialize_with = "de_choices",
        skip_serializing_if = "Option::is_none"
    )]
    pub choices: Option<Vec<Choice>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl DatasetItem {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            choices: None,
            label: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_choices(mut self, choices: Vec<Choice>) -> Self {
        self.choices = Some(choices);
        self
    }

    /// Append a stage name to the item's provenance trail.
    pub fn record_stage(&mut self, stage: &str) {
        let entry = self.meta.entry("stages".to_string()).or_default();
        if entry.is_empty() {
            *entry = stage.to_string();
        } else {
            entry.push(',');
            entry.push_str(stage);
        }
    }

    /// Check the structural invariants: nonempty text, distinct choice keys,
    /// and (when both are present) a label that names one of the choices.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.text.trim().is_empty() {
            return Err(DataError::Schema(format!("item {}: empty text", self.id)));
        }
        if let Some(choices) = &self.choices {
            let mut seen = std::collections::BTreeSet::new();
            for c in choices {
                if !seen.insert(c.key.as_str()) {
                    return Err(DataError::Schema(format!(
                        "item {}: duplicate choice key {}",
                        self.id, c.key
                    )));
                }
            }
            if let Some(label) = &self.label {
                if !seen.contains(label.as_str()) {
                    return Err(DataError::Schema(format!(
                        "item {}: label {} is not a choice key",
                        self.id, label
                    )));
                }
            }
        }
        Ok(())
    }

    /// The body of the correct choice, when this is a labeled multiple-choice item.
    pub fn correct_choice_body(&self) -> Option<&str> {
        let label = self.label.as_deref()?;
        self.choices
            .as_deref()?
            .iter()
            .find(|c| c.key == label)
            .map(|c| c.body.as_str())
    }

    /// Render the item as a compact JSON object (text/choices/label only) for
    /// embedding in prompts. Deterministic: field order is fixed.
    pub fn prompt_json(&self) -> String {
        let mut obj = serde_json::Map::new();
        obj.insert("text".into(), serde_json::Value::String(self.text.clone()));
        if let Some(choices) = &self.choices {
            let arr: Vec<serde_json::Value> = choices
                .iter()
                .map(|c| {
                    let mut m = serde_json::Map::new();
                    m.insert("key".into(), serde_json::Value::String(c.key.clone()));
                    m.insert("body".into(), serde_json::Value::String(c.body.clone()));
                    serde_json::Value::Object(m)
                })
                .collect();
            obj.insert("choices".into(), serde_json::Value::Array(arr));
        }
        if let Some(label) = &self.label {
            obj.insert("label".into(), serde_json::Value::String(label.clone()));
        }
        serde_json::Value::Object(obj).to_string()
    }
}

/// High-level description of a dataset, used verbatim in prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub description: String,
    pub with_label: bool,
    pub answer_format: AnswerFormat,
}

impl DatasetDescriptor {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.description.trim().is_empty() {
            return Err(DataError::Schema(
                "dataset description must be nonempty".into(),
            ));
        }
        Ok(())
    }

    /// Check that an item matches this descriptor's shape. Items failing this
    /// check are counted as format errors by the generation engine.
    pub fn item_conforms(&self, item: &DatasetItem) -> bool {
        if item.validate().is_err() {
            return false;
        }
        if self.with_label && item.label.is_none() {
            return false;
        }
        match self.answer_format {
            AnswerFormat::MultipleChoice => item.choices.as_ref().is_some_and(|c| !c.is_empty()),
            _ => true,
        }
    }
}

/// Ordered free-text generation constraints. May be empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub constraints: Vec<String>,
}

impl ConstraintSet {
    pub fn new(constraints: Vec<String>) -> Self {
        Self { constraints }
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }
}
