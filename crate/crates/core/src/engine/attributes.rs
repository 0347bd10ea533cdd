//! Attribute pools for attribute-guided generation: user-supplied keywords or
//! keywords extracted from seed examples by the LLM.

use serde::{Deserialize, Serialize};

use crate::data::{CallLedger, DatasetDescriptor, DatasetItem, Stage};
use crate::gateway::{extract_json_payload, ChatRequest, Gateway, GatewayError, Message};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeSource {
    UserSupplied,
    LlmExtracted,
}

/// A deduplicated set of guidance keywords. Deduplication is
/// case-insensitive; the first-seen casing survives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributePool {
    pub attributes: Vec<String>,
    pub source: AttributeSource,
}

impl AttributePool {
    pub fn user_supplied(attributes: Vec<String>) -> Self {
        Self {
            attributes: dedupe_case_insensitive(attributes),
            source: AttributeSource::UserSupplied,
        }
    }
}

fn dedupe_case_insensitive(raw: Vec<String>) -> Vec<String> {
    let mut seen = std::collections::BTreeSet::new();
    raw.into_iter()
        .map(|a| a.trim().to_string())
        .filter(|a| !a.is_empty() && seen.insert(a.to_lowercase()))
        .collect()
}

// "category" values may be strings or arrays of strings, and the payload may
// be one object or a list of per-example objects.
fn collect_categories(value: &serde_json::Value, out: &mut Vec<String>) {
    match value {
        serde_json::Value::Array(items) => {
            for item in items {
                collect_categories(item, out);
            }
        }
        serde_json::Value::Object(map) => {
            if let Some(category) = map.get("category") {
                match category {
                    serde_json::Value::String(s) => out.push(s.clone()),
                    serde_json::Value::Array(values) => {
                        out.extend(values.iter().filter_map(|v| v.as_str().map(str::to_string)))
                    }
                    _ => {}
                }
            }
        }
        _ => {}
    }
}

/// Extract characteristic keywords from seed examples. The prompt is retried
/// once on an unusable reply; after that the pool comes back empty and the
/// caller runs unguided.
pub fn extract_attributes(
    gateway: &Gateway,
    model: &str,
    descriptor: &DatasetDescriptor,
    examples: &[DatasetItem],
    ledger: &mut CallLedger,
) -> Result<AttributePool, GatewayError> {
    let examples_block = examples
        .iter()
        .map(DatasetItem::prompt_json)
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = gateway.templates().render(
        "attribute_guided",
        &[
            ("description", descriptor.description.as_str()),
            ("few_shot_examples", examples_block.as_str()),
        ],
    )?;
    let request = ChatRequest::new(model, vec![Message::user(prompt)]);

    for attempt in 0..2 {
        let completion = gateway.chat_logged(
            Stage::AttributeExtraction,
            "attribute-pool",
            &request,
            ledger,
        )?;
        if let Ok(payload) = extract_json_payload(&completion.text) {
            let mut raw = Vec::new();
            collect_categories(&payload, &mut raw);
            let attributes = dedupe_case_insensitive(raw);
            if !attributes.is_empty() {
                return Ok(AttributePool {
                    attributes,
                    source: AttributeSource::LlmExtracted,
                });
            }
        }
        if attempt == 0 {
            log::warn!("attribute extraction reply unusable; retrying once");
        }
    }
    log::warn!("attribute extraction failed twice; returning an empty pool");
    Ok(AttributePool {
        attributes: Vec::new(),
        source: AttributeSource::LlmExtracted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RateCard;
    use crate::gateway::{EmbeddingStore, MockChatProvider, MockEmbedder, TemplateSet};

    fn gateway_with(mock: MockChatProvider) -> Gateway {
        Gateway::new(
            Box::new(mock),
            EmbeddingStore::new(Box::new(MockEmbedder::default())),
            TemplateSet::builtin(),
            RateCard::default(),
            2,
        )
    }

    fn descriptor() -> DatasetDescriptor {
        DatasetDescriptor {
            name: "t".into(),
            description: "d".into(),
            with_label: true,
            answer_format: crate::data::AnswerFormat::FreeText,
        }
    }

    fn examples() -> Vec<DatasetItem> {
        vec![DatasetItem::new("s-0", "example question").with_label("x")]
    }

    #[test]
    fn categories_union_across_records() {
        let gateway = gateway_with(MockChatProvider::new(0).with_rule(
            "adding a key named \"category\"",
            r#"[{"category":["sports"]},{"category":["economics"]}]"#,
        ));
        let mut ledger = CallLedger::new();
        let pool =
            extract_attributes(&gateway, "mock", &descriptor(), &examples(), &mut ledger).unwrap();
        assert_eq!(pool.attributes, vec!["sports", "economics"]);
        assert_eq!(pool.source, AttributeSource::LlmExtracted);
    }

    #[test]
    fn dedupe_is_case_insensitive() {
        let gateway = gateway_with(MockChatProvider::new(0).with_rule(
            "adding a key named \"category\"",
            r#"[{"category":["Sports"]},{"category":["sports"]}]"#,
        ));
        let mut ledger = CallLedger::new();
        let pool =
            extract_attributes(&gateway, "mock", &descriptor(), &examples(), &mut ledger).unwrap();
        assert_eq!(pool.attributes, vec!["Sports"]);
    }

    #[test]
    fn user_supplied_pool_skips_the_llm() {
        let pool = AttributePool::user_supplied(vec!["history".into(), "science".into()]);
        assert_eq!(pool.attributes, vec!["history", "science"]);
        assert_eq!(pool.source, AttributeSource::UserSupplied);
    }

    #[test]
    fn prose_reply_retries_then_empties() {
        let gateway = gateway_with(
            MockChatProvider::new(0)
                .with_rule("adding a key named \"category\"", "no structure here"),
        );
        let mut ledger = CallLedger::new();
        let pool =
            extract_attributes(&gateway, "mock", &descriptor(), &examples(), &mut ledger).unwrap();
        assert!(pool.attributes.is_empty());
        assert_eq!(ledger.records().len(), 2);
    }
}
