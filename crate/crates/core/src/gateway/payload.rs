//! Tolerant extraction of JSON payloads from completion text.
//!
//! Providers wrap JSON in code fences, prose, or both. We scan for the first
//! position where a well-formed JSON object or array starts and parse exactly
//! one value there, ignoring whatever follows.

use serde_json::Value;

use crate::data::{choices_from_value, DatasetItem};

use super::provider::GatewayError;

/// Find the first well-formed JSON object or array in `text`.
pub fn extract_json_payload(text: &str) -> Result<Value, GatewayError> {
    for (index, ch) in text.char_indices() {
        if ch != '{' && ch != '[' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[index..]).into_iter::<Value>();
        if let Some(Ok(value)) = stream.next() {
            if value.is_object() || value.is_array() {
                return Ok(value);
            }
        }
    }
    Err(GatewayError::Format)
}

/// Interpret a payload as a list of records: an array stays an array, and a
/// bare object becomes a one-element list.
pub fn payload_records(value: Value) -> Vec<Value> {
    match value {
        Value::Array(items) => items,
        other => vec![other],
    }
}

/// Map one generated record onto a dataset item. Accepts `question`/`answer`
/// as aliases for `text`/`label`, and any choice shape `choices_from_value`
/// understands. The id is assigned by the caller.
pub fn item_from_record(id: impl Into<String>, record: &Value) -> Result<DatasetItem, String> {
    let obj = record.as_object().ok_or("record is not an object")?;
    let text = obj
        .get("text")
        .or_else(|| obj.get("question"))
        .and_then(|v| v.as_str())
        .ok_or("record has no text")?;
    if text.trim().is_empty() {
        return Err("record text is empty".into());
    }
    let label = obj
        .get("label")
        .or_else(|| obj.get("answer"))
        .map(|v| match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        });
    let choices = match obj.get("choices") {
        Some(v) => Some(choices_from_value(v)?),
        None => None,
    };
    let mut item = DatasetItem::new(id, text);
    item.label = label;
    item.choices = choices;
    Ok(item)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_object_is_found() {
        let value = extract_json_payload("```json\n{\"a\":1}\n```").unwrap();
        assert_eq!(value, serde_json::json!({"a": 1}));
    }

    #[test]
    fn array_after_prose_is_found() {
        let text = r#"Here you go: [{"x":1},{"x":2},{"x":3},{"x":4},{"x":5}] hope it helps"#;
        let value = extract_json_payload(text).unwrap();
        assert_eq!(value.as_array().unwrap().len(), 5);
    }

    #[test]
    fn prose_without_json_is_a_format_error() {
        assert!(matches!(
            extract_json_payload("no structured data here at all"),
            Err(GatewayError::Format)
        ));
    }

    #[test]
    fn stray_brace_before_real_payload_is_skipped() {
        let text = "weird { not json } then {\"ok\": true}";
        let value = extract_json_payload(text).unwrap();
        assert_eq!(value, serde_json::json!({"ok": true}));
    }

    #[test]
    fn record_aliases_are_accepted() {
        let rec = serde_json::json!({"question": "q", "answer": "a"});
        let item = item_from_record("gen-0-0", &rec).unwrap();
        assert_eq!(item.text, "q");
        assert_eq!(item.label.as_deref(), Some("a"));
    }

    #[test]
    fn numeric_label_becomes_string() {
        let rec = serde_json::json!({"text": "q", "label": 90});
        let item = item_from_record("gen-0-0", &rec).unwrap();
        assert_eq!(item.label.as_deref(), Some("90"));
    }
}
