//! Prompt template fixtures and rendering.
//!
//! Templates live as plain text files under `templates/` so their wording can
//! be diffed and versioned without touching code. A placeholder is either
//! `{name}` or `[[name]]`, where `name` starts with a letter or underscore and
//! contains only letters, digits, underscores, and spaces. Anything else —
//! including the literal JSON braces the templates use to show output shapes —
//! is left untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

use crate::data::AnswerFormat;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {template}: no binding for placeholder `{name}`")]
    MissingBinding { template: String, name: String },
    #[error("template {template}: binding `{name}` matches no placeholder")]
    UnusedBinding { template: String, name: String },
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("failed to read template {path}: {message}")]
    Load { path: String, message: String },
}

/// A named template body with placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
}

enum Segment<'a> {
    Literal(&'a str),
    Placeholder(&'a str),
}

fn parse_placeholder(rest: &str, open: &str, close: &str) -> Option<(usize, usize)> {
    let inner = rest.strip_prefix(open)?;
    let end = inner.find(close)?;
    let name = &inner[..end];
    let mut chars = name.chars();
    let first = chars.next()?;
    if !(first.is_ascii_alphabetic() || first == '_') {
        return None;
    }
    if !chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == ' ') {
        return None;
    }
    Some((open.len(), open.len() + end))
}

fn segments(body: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut literal_start = 0;
    let mut i = 0;
    let bytes = body.as_bytes();
    while i < bytes.len() {
        let rest = &body[i..];
        let hit = if rest.starts_with("[[") {
            parse_placeholder(rest, "[[", "]]").map(|(s, e)| (s, e, 2))
        } else if rest.starts_with('{') {
            parse_placeholder(rest, "{", "}").map(|(s, e)| (s, e, 1))
        } else {
            None
        };
        match hit {
            Some((name_start, name_end, close_len)) => {
                if literal_start < i {
                    out.push(Segment::Literal(&body[literal_start..i]));
                }
                out.push(Segment::Placeholder(&rest[name_start..name_end]));
                i += name_end + close_len;
                literal_start = i;
            }
            None => {
                // Skip one whole character, not one byte.
                i += rest.chars().next().map_or(1, char::len_utf8);
            }
        }
    }
    if literal_start < body.len() {
        out.push(Segment::Literal(&body[literal_start..]));
    }
    out
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            body: body.into(),
        }
    }

    /// Names of all placeholders in the body.
    pub fn placeholders(&self) -> BTreeSet<&str> {
        segments(&self.body)
            .into_iter()
            .filter_map(|s| match s {
                Segment::Placeholder(name) => Some(name),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    /// Substitute every placeholder. Bindings must cover the placeholders
    /// exactly: a placeholder without a binding and a binding without a
    /// placeholder are both errors.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
        let map: BTreeMap<&str, &str> = bindings.iter().copied().collect();
        let mut used: BTreeSet<&str> = BTreeSet::new();
        let mut out = String::with_capacity(self.body.len());
        for segment in segments(&self.body) {
            match segment {
                Segment::Literal(text) => out.push_str(text),
                Segment::Placeholder(name) => match map.get(name) {
                    Some(value) => {
                        used.insert(name);
                        out.push_str(value);
                    }
                    None => {
                        return Err(TemplateError::MissingBinding {
                            template: self.name.clone(),
                            name: name.to_string(),
                        })
                    }
                },
            }
        }
        for key in map.keys() {
            if !used.contains(key) {
                return Err(TemplateError::UnusedBinding {
                    template: self.name.clone(),
                    name: key.to_string(),
                });
            }
        }
        Ok(out)
    }
}

macro_rules! builtin_templates {
    ($(($name:literal, $file:literal)),+ $(,)?) => {
        const BUILTIN: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../../templates/", $file)))),+
        ];
    };
}

builtin_templates![
    ("self_reflection", "self_reflection.txt"),
    ("self_enhancement", "self_enhancement.txt"),
    ("description", "description.txt"),
    ("initial", "initial.txt"),
    ("return_format", "return_format.txt"),
    ("attribute_guided", "attribute_guided.txt"),
    ("attribute_directive", "attribute_directive.txt"),
    ("constraints_prefix", "constraints_prefix.txt"),
    ("constraints_suffix", "constraints_suffix.txt"),
    ("human_feedback", "human_feedback.txt"),
    ("feedback_prefix", "feedback_prefix.txt"),
    ("wiki_keyword_extract", "wiki_keyword_extract.txt"),
    ("wiki_fact_refine", "wiki_fact_refine.txt"),
    ("math_eval", "math_eval.txt"),
    ("math_eval_compare", "math_eval_compare.txt"),
    ("judge_evaluation", "judge_evaluation.txt"),
    ("constraint_compliance", "constraint_compliance.txt"),
    ("candidate_answer", "candidate_answer.txt"),
    ("difficulty_enhance", "difficulty_enhance.txt"),
    (
        "data_format_multiple_choice",
        "data_format_multiple_choice.txt"
    ),
    ("data_format_numeric", "data_format_numeric.txt"),
    ("data_format_free_text", "data_format_free_text.txt"),
    ("data_format_boolean", "data_format_boolean.txt"),
    ("data_format_unlabeled", "data_format_unlabeled.txt"),
];

/// The full set of prompt templates used by the pipeline.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateSet {
    /// The templates compiled into the crate from `templates/`.
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(name, body)| {
                (
                    name.to_string(),
                    PromptTemplate::new(*name, body.strip_suffix('\n').unwrap_or(body)),
                )
            })
            .collect();
        Self { templates }
    }

    /// Load templates from a directory of `<name>.txt` files. Files present in
    /// the directory override the builtin of the same name; missing ones fall
    /// back to the builtin.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        let dir = dir.as_ref();
        let entries = std::fs::read_dir(dir).map_err(|e| TemplateError::Load {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        for entry in entries {
            let entry = entry.map_err(|e| TemplateError::Load {
                path: dir.display().to_string(),
                message: e.to_string(),
            })?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let body = std::fs::read_to_string(&path).map_err(|e| TemplateError::Load {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            let body = body.strip_suffix('\n').unwrap_or(&body);
            set.templates
                .insert(name.clone(), PromptTemplate::new(name, body));
        }
        Ok(set)
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .get(name)
            .ok_or_else(|| TemplateError::UnknownTemplate(name.to_string()))
    }

    pub fn render(&self, name: &str, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
        self.get(name)?.render(bindings)
    }

    /// The `{data_format}` block matching an answer format.
    pub fn data_format(
        &self,
        format: AnswerFormat,
        with_label: bool,
    ) -> Result<&str, TemplateError> {
        let name = if !with_label {
            "data_format_unlabeled"
        } else {
            match format {
                AnswerFormat::MultipleChoice => "data_format_multiple_choice",
                AnswerFormat::Numeric => "data_format_numeric",
                AnswerFormat::FreeText => "data_format_free_text",
                AnswerFormat::Boolean => "data_format_boolean",
            }
        };
        Ok(self.get(name)?.body.as_str())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}
