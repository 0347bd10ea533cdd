//! Flat-file dataset loading and saving.
//!
//! A dataset file is a JSON array of records: `{"id"?, "text", "choices"?,
//! "label"?, "meta"?}`. Records without an id get a deterministic
//! `seed-<index>` id. The answer format is inferred from the records and must
//! be consistent across the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{AnswerFormat, Choice, DataError, DatasetDescriptor, DatasetItem};

#[derive(Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<String>,
    text: String,
    #[serde(default, deserialize_with = "de_raw_choices")]
    choices: Option<Vec<Choice>>,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

fn de_raw_choices<'de, D>(deserializer: D) -> Result<Option<Vec<Choice>>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    use serde::de::Error;
    let value = serde_json::Value::deserialize(deserializer)?;
    super::choices_from_value(&value)
        .map(Some)
        .map_err(D::Error::custom)
}

/// A parsed seed dataset. The descriptor's `description` is left empty here —
/// the dataset file carries no prose — and must be supplied from configuration
/// before the descriptor is used for prompting.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub items: Vec<DatasetItem>,
    pub descriptor: DatasetDescriptor,
}

impl LoadedDataset {
    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.descriptor.description = description.into();
        self
    }
}

/// Load a seed dataset from `path`.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<LoadedDataset, DataError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let records: Vec<RawRecord> = serde_json::from_str(&raw).map_err(|e| DataError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let mut items = Vec::with_capacity(records.len());
    let mut seen_ids = std::collections::BTreeSet::new();
    for (index, rec) in records.into_iter().enumerate() {
        let id = rec.id.unwrap_or_else(|| format!("seed-{index}"));
        if !seen_ids.insert(id.clone()) {
            return Err(DataError::Schema(format!("duplicate item id {id}")));
        }
        let item = DatasetItem {
            id,
            text: rec.text,
            choices: rec.choices,
            label: rec.label,
            meta: rec.meta,
        };
        item.validate()?;
        items.push(item);
    }

    let answer_format = infer_answer_format(&items)?;
    let with_label = !items.is_empty() && items.iter().all(|i| i.label.is_some());
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());

    Ok(LoadedDataset {
        items,
        descriptor: DatasetDescriptor {
            name,
            description: String::new(),
            with_label,
            answer_format,
        },
    })
}

/// Classify the answer format shared by all items, or fail if the file mixes
/// choice-bearing and plain records.
fn infer_answer_format(items: &[DatasetItem]) -> Result<AnswerFormat, DataError> {
    if items.is_empty() {
        return Ok(AnswerFormat::FreeText);
    }
    let with_choices = items.iter().filter(|i| i.choices.is_some()).count();
    if with_choices > 0 && with_choices < items.len() {
        return Err(DataError::Schema(format!(
            "mixed answer formats: {with_choices} of {} records have choices",
            items.len()
        )));
    }
    if with_choices == items.len() {
        return Ok(AnswerFormat::MultipleChoice);
    }
    let labels: Vec<&str> = items.iter().filter_map(|i| i.label.as_deref()).collect();
    if labels.len() == items.len() {
        if labels.iter().all(|l| l.trim().parse::<f64>().is_ok()) {
            return Ok(AnswerFormat::Numeric);
        }
        if labels
            .iter()
            .all(|l| matches!(l.trim().to_ascii_lowercase().as_str(), "true" | "false"))
        {
            return Ok(AnswerFormat::Boolean);
        }
    }
    Ok(AnswerFormat::FreeText)
}

/// Write `items` to `path` as pretty-printed JSON. `load(save(x)) == x`,
/// including meta.
pub fn save_dataset(items: &[DatasetItem], path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    for item in items {
        item.validate()?;
    }
    let mut out = serde_json::to_string_pretty(items).expect("dataset items serialize");
    out.push('\n');
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| DataError::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
    }
    fs::write(path, out).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_multiple_choice_record() {
        let f = write_tmp(
            r#"[{"text":"q1","label":"A","choices":[{"key":"A","body":"x"},{"key":"B","body":"y"}]}]"#,
        );
        let loaded = load_dataset(f.path()).unwrap();
        assert_eq!(loaded.items.len(), 1);
        assert_eq!(loaded.items[0].id, "seed-0");
        assert_eq!(
            loaded.descriptor.answer_format,
            AnswerFormat::MultipleChoice
        );
        assert!(loaded.descriptor.with_label);
    }

    #[test]
    fn empty_array_is_an_empty_dataset() {
        let f = write_tmp("[]");
        let loaded = load_dataset(f.path()).unwrap();
        assert!(loaded.items.is_empty());
    }

    #[test]
    fn malformed_json_reports_position() {
        let f = write_tmp("[{\"text\": }]");
        match load_dataset(f.path()) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn mixed_choice_presence_is_a_schema_error() {
        let f = write_tmp(
            r#"[{"text":"q1","choices":[{"key":"A","body":"x"}],"label":"A"},{"text":"q2","label":"7"}]"#,
        );
        assert!(matches!(load_dataset(f.path()), Err(DataError::Schema(_))));
    }

    #[test]
    fn numeric_labels_infer_numeric_format() {
        let f = write_tmp(r#"[{"text":"q1","label":"90"},{"text":"q2","label":"12.5"}]"#);
        let loaded = load_dataset(f.path()).unwrap();
        assert_eq!(loaded.descriptor.answer_format, AnswerFormat::Numeric);
    }

    #[test]
    fn map_shaped_choices_are_accepted() {
        let f = write_tmp(r#"[{"text":"q","choices":{"B":"two","A":"one"},"label":"A"}]"#);
        let loaded = load_dataset(f.path()).unwrap();
        let choices = loaded.items[0].choices.as_ref().unwrap();
        assert_eq!(choices[0], Choice::new("A", "one"));
        assert_eq!(choices[1], Choice::new("B", "two"));
    }

    #[test]
    fn round_trip_preserves_everything() {
        let mut item = DatasetItem::new("seed-0", "what is 1+1? \u{1F914}")
            .with_choices(vec![Choice::new("A", "2"), Choice::new("B", "3")])
            .with_label("A");
        item.meta.insert("origin".into(), "unit-test".into());
        let items = vec![item];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.json");
        save_dataset(&items, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.items, items);
    }

    #[test]
    fn save_writes_one_record_per_item() {
        let items: Vec<DatasetItem> = (0..212)
            .map(|i| DatasetItem::new(format!("seed-{i}"), format!("q{i}")).with_label("1"))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.json");
        save_dataset(&items, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.items.len(), 212);
    }
}
