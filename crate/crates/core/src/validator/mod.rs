//! Retrieval-backed truthfulness validation: extract entities from an item,
//! pull reference passages for them, and ask the LLM to confirm or refine the
//! item against the evidence.

pub mod corpus;

pub use corpus::{LiveCorpus, LocalCorpus, Lookup, ReferenceCorpus};

use serde::{Deserialize, Serialize};

use crate::data::{CallLedger, DatasetItem, Stage};
use crate::gateway::{extract_json_payload, ChatRequest, Gateway, GatewayError, Message};
use crate::par::parallel_map;

/// Per-entity character budget for evidence sent to the model. Retrieval is
/// the dominant token cost of the whole pipeline, so extracts are truncated
/// before prompting.
pub const DEFAULT_EVIDENCE_BUDGET: usize = 4000;

/// Entities extracted for fact-checking; the template caps them at three.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityKeywords {
    pub entities: Vec<String>,
}

pub const MAX_ENTITIES: usize = 3;

/// Ask the LLM for the item's key entities. An unusable reply yields an empty
/// list, which callers treat as "validation inapplicable".
pub fn extract_entities(
    gateway: &Gateway,
    model: &str,
    item: &DatasetItem,
    ledger: &mut CallLedger,
) -> Result<EntityKeywords, GatewayError> {
    let prompt = gateway.templates().render(
        "wiki_keyword_extract",
        &[("input_text", item.text.as_str())],
    )?;
    let request = ChatRequest::new(model, vec![Message::user(prompt)]);
    let completion = gateway.chat_logged(Stage::RagKeyword, &item.id, &request, ledger)?;
    let Ok(payload) = extract_json_payload(&completion.text) else {
        log::warn!(
            "item {}: entity reply had no JSON; skipping validation",
            item.id
        );
        return Ok(EntityKeywords::default());
    };
    let mut entities: Vec<String> = payload
        .get("entities")
        .and_then(|e| e.as_array())
        .map(|arr| {
            arr.iter()
                .filter_map(|v| v.as_str())
                .map(str::to_string)
                .filter(|s| !s.trim().is_empty())
                .collect()
        })
        .unwrap_or_default();
    entities.truncate(MAX_ENTITIES);
    Ok(EntityKeywords { entities })
}

/// Evidence gathered for one item.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievedEvidence {
    pub hits: Vec<EvidencePassage>,
    pub misses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidencePassage {
    pub title: String,
    pub extract: String,
    pub source: String,
}

impl RetrievedEvidence {
    pub fn has_hits(&self) -> bool {
        !self.hits.is_empty()
    }

    /// Evidence block for the refine prompt: one titled section per hit.
    fn prompt_block(&self) -> String {
        let mut out = String::new();
        for passage in &self.hits {
            out.push_str(&format!("[{}]\n{}\n", passage.title, passage.extract));
        }
        out
    }
}

/// Look up each entity in the corpus, truncating extracts to `budget` chars.
/// Misses are recorded, not fatal.
pub fn retrieve(
    entities: &EntityKeywords,
    corpus: &dyn ReferenceCorpus,
    budget: usize,
) -> RetrievedEvidence {
    let mut evidence = RetrievedEvidence::default();
    for entity in &entities.entities {
        match corpus.lookup(entity) {
            Lookup::Hit {
                title,
                mut extract,
                source,
            } => {
                if extract.len() > budget {
                    let mut cut = budget;
                    while !extract.is_char_boundary(cut) {
                        cut -= 1;
                    }
                    extract.truncate(cut);
                }
                evidence.hits.push(EvidencePassage {
                    title,
                    extract,
                    source,
                });
            }
            Lookup::Miss { title } => evidence.misses.push(title),
        }
    }
    evidence
}

/// Parsed verdict from the refine template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementVerdict {
    pub thinking_progress: String,
    pub is_original_example_good: bool,
    pub refined: Option<serde_json::Value>,
}

// The template's own schema spells the affirmative value "Ture", so tolerant
// parsing is required to avoid a systematic format-error class.
fn parse_verdict_bool(value: &serde_json::Value) -> Option<bool> {
    match value {
        serde_json::Value::Bool(b) => Some(*b),
        serde_json::Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" | "ture" | "yes" => Some(true),
            "false" | "no" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationOutcome {
    Confirmed,
    Corrected,
    /// Every entity lookup missed; nothing to check against.
    Unverifiable,
    /// Unusable reply somewhere; item untouched.
    Skipped,
}

/// Validate one item against retrieved evidence, rewriting it when the model
/// flags a factual problem. The item is never dropped; a correction keeps the
/// old payload in meta for audit.
pub fn validate_and_refine(
    gateway: &Gateway,
    model: &str,
    item: &mut DatasetItem,
    evidence: &RetrievedEvidence,
    ledger: &mut CallLedger,
) -> Result<ValidationOutcome, GatewayError> {
    if !evidence.has_hits() {
        item.meta.insert("unverifiable".into(), "true".into());
        return Ok(ValidationOutcome::Unverifiable);
    }
    let wiki_block = evidence.prompt_block();
    let prompt = gateway.templates().render(
        "wiki_fact_refine",
        &[
            ("input_text", item.prompt_json().as_str()),
            ("wiki_data", wiki_block.as_str()),
        ],
    )?;
    let request = ChatRequest::new(model, vec![Message::user(prompt)]);
    let completion = gateway.chat_logged(Stage::RagRefine, &item.id, &request, ledger)?;
    let Ok(payload) = extract_json_payload(&completion.text) else {
        log::warn!(
            "item {}: refine reply had no JSON; leaving unchanged",
            item.id
        );
        return Ok(ValidationOutcome::Skipped);
    };
    let Some(good) = payload
        .get("is_original_example_good")
        .and_then(parse_verdict_bool)
    else {
        log::warn!(
            "item {}: refine verdict unparsable; leaving unchanged",
            item.id
        );
        return Ok(ValidationOutcome::Skipped);
    };

    if good {
        item.meta.insert("fact_checked".into(), "true".into());
        item.record_stage("rag_validation");
        return Ok(ValidationOutcome::Confirmed);
    }

    let refined_value = payload.get("refined_text").cloned().unwrap_or_default();
    if refined_value.is_null()
        || refined_value.as_str().is_some_and(|s| {
            let t = s.trim();
            t.is_empty() || t.eq_ignore_ascii_case("none")
        })
    {
        // Flagged bad but no replacement offered; keep the original.
        item.meta.insert("fact_checked".into(), "true".into());
        item.record_stage("rag_validation");
        return Ok(ValidationOutcome::Confirmed);
    }

    let refined_item = match crate::gateway::item_from_record(&item.id, &refined_value) {
        Ok(refined) => refined,
        Err(e) => {
            log::warn!(
                "item {}: refined payload rejected ({e}); keeping original",
                item.id
            );
            return Ok(ValidationOutcome::Skipped);
        }
    };
    // Shape guard: the replacement must keep the item's structural shape.
    let same_shape = match (&item.choices, &refined_item.choices) {
        (Some(a), Some(b)) => a.len() == b.len(),
        (None, None) => true,
        _ => false,
    } && (item.label.is_some() == refined_item.label.is_some());
    if !same_shape || refined_item.validate().is_err() {
        log::warn!(
            "item {}: refined payload changed shape; keeping original",
            item.id
        );
        return Ok(ValidationOutcome::Skipped);
    }

    item.meta.insert("old_payload".into(), item.prompt_json());
    item.text = refined_item.text;
    item.choices = refined_item.choices;
    item.label = refined_item.label;
    item.meta.insert("rag_corrected".into(), "true".into());
    item.meta.insert("fact_checked".into(), "true".into());
    item.record_stage("rag_validation");
    Ok(ValidationOutcome::Corrected)
}

/// Validation statistics for the manifest; the corrected fraction is the
/// headline number.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidatorStats {
    pub confirmed: u64,
    pub corrected_ids: Vec<String>,
    pub unverifiable: u64,
    pub skipped: u64,
}

impl ValidatorStats {
    pub fn corrected_fraction(&self, total: usize) -> f64 {
        if total == 0 {
            0.0
        } else {
            self.corrected_ids.len() as f64 / total as f64
        }
    }
}

/// Validate a whole corpus, in parallel up to `max_worker`.
pub fn validate_dataset(
    gateway: &Gateway,
    model: &str,
    items: &mut [DatasetItem],
    corpus: &dyn ReferenceCorpus,
    evidence_budget: usize,
    max_worker: usize,
    ledger: &mut CallLedger,
) -> Result<ValidatorStats, GatewayError> {
    let snapshot: Vec<DatasetItem> = items.to_vec();
    let results = parallel_map(&snapshot, max_worker, |_, item| {
        let mut local = CallLedger::new();
        let mut copy = item.clone();
        let outcome = (|| -> Result<ValidationOutcome, GatewayError> {
            let entities = extract_entities(gateway, model, &copy, &mut local)?;
            if entities.entities.is_empty() {
                copy.meta.insert("unverifiable".into(), "true".into());
                return Ok(ValidationOutcome::Unverifiable);
            }
            let evidence = retrieve(&entities, corpus, evidence_budget);
            validate_and_refine(gateway, model, &mut copy, &evidence, &mut local)
        })();
        (outcome, copy, local)
    });

    let mut stats = ValidatorStats::default();
    for ((outcome, updated, local), slot) in results.into_iter().zip(items.iter_mut()) {
        ledger.extend(local);
        *slot = updated;
        match outcome? {
            ValidationOutcome::Confirmed => stats.confirmed += 1,
            ValidationOutcome::Corrected => stats.corrected_ids.push(slot.id.clone()),
            ValidationOutcome::Unverifiable => stats.unverifiable += 1,
            ValidationOutcome::Skipped => stats.skipped += 1,
        }
    }
    Ok(stats)
}
