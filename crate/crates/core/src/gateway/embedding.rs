//! Item-aligned embedding matrices and the content-addressed embedding cache.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::mock::sha256_hex;
use super::provider::{EmbeddingProvider, GatewayError};

/// Embeddings aligned with a list of item ids. All rows share one length and
/// contain only finite values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub model: String,
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl EmbeddingMatrix {
    pub fn new(
        model: impl Into<String>,
        ids: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self, GatewayError> {
        if ids.len() != rows.len() {
            return Err(GatewayError::Transport(format!(
                "embedding rows ({}) do not match ids ({})",
                rows.len(),
                ids.len()
            )));
        }
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        for (id, row) in ids.iter().zip(&rows) {
            if row.len() != dim {
                return Err(GatewayError::Transport(format!(
                    "embedding for {id} has length {} (expected {dim})",
                    row.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(GatewayError::Transport(format!(
                    "embedding for {id} contains a non-finite value"
                )));
            }
        }
        Ok(Self {
            model: model.into(),
            ids,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map(Vec::len).unwrap_or(0)
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.rows[index]
    }
}

/// Caching front-end over an embedding provider.
///
/// Entries are content-addressed by (model, sha256(text)): repeats within a
/// call, across calls, and across processes (when a disk directory is given)
/// all resolve without touching the provider. Reads share a lock; writes take
/// it exclusively.
pub struct EmbeddingStore {
    provider: Box<dyn EmbeddingProvider>,
    disk_dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, Vec<f64>>>,
}

impl EmbeddingStore {
    pub fn new(provider: Box<dyn EmbeddingProvider>) -> Self {
        Self {
            provider,
            disk_dir: None,
            memory: RwLock::new(HashMap::new()),
        }
    }

    pub fn with_disk_cache(mut self, dir: impl Into<PathBuf>) -> Self {
        self.disk_dir = Some(dir.into());
        self
    }

    fn cache_key(model: &str, text: &str) -> String {
        format!("{model}\u{1}{}", sha256_hex(text))
    }

    fn disk_path(&self, key: &str) -> Option<PathBuf> {
        let dir = self.disk_dir.as_ref()?;
        let safe = key.replace('\u{1}', "_").replace(['/', ':'], "_");
        Some(dir.join(format!("{safe}.json")))
    }

    fn disk_read(&self, key: &str) -> Option<Vec<f64>> {
        let path = self.disk_path(key)?;
        let raw = std::fs::read_to_string(path).ok()?;
        serde_json::from_str(&raw).ok()
    }

    fn disk_write(&self, key: &str, row: &[f64]) {
        let Some(path) = self.disk_path(key) else {
            return;
        };
        let Some(dir) = path.parent() else { return };
        if std::fs::create_dir_all(dir).is_err() {
            return;
        }
        // Write-then-rename keeps concurrent readers from seeing partial files.
        let tmp = dir.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            sha256_hex(key).chars().take(8).collect::<String>()
        ));
        if std::fs::write(&tmp, serde_json::to_string(row).expect("row serializes")).is_ok() {
            let _ = std::fs::rename(&tmp, &path);
        }
    }

    /// Embed `texts`, reusing cached rows. Row `i` corresponds to `texts[i]`.
    pub fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::Refusal("no texts to embed".into()));
        }
        let keys: Vec<String> = texts.iter().map(|t| Self::cache_key(model, t)).collect();
        let mut rows: Vec<Option<Vec<f64>>> = vec![None; texts.len()];

        {
            let memory = self.memory.read().expect("embedding cache poisoned");
            for (i, key) in keys.iter().enumerate() {
                if let Some(row) = memory.get(key) {
                    rows[i] = Some(row.clone());
                }
            }
        }
        for (i, key) in keys.iter().enumerate() {
            if rows[i].is_none() {
                if let Some(row) = self.disk_read(key) {
                    rows[i] = Some(row);
                }
            }
        }

        // One provider call covers every distinct miss.
        let mut miss_texts: Vec<String> = Vec::new();
        let mut miss_keys: Vec<String> = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            if rows[i].is_none() && !miss_keys.contains(key) {
                miss_keys.push(key.clone());
                miss_texts.push(texts[i].clone());
            }
        }
        if !miss_texts.is_empty() {
            let fetched = self.provider.embed(model, &miss_texts)?;
            if fetched.len() != miss_texts.len() {
                return Err(GatewayError::Transport("embedding count mismatch".into()));
            }
            let mut memory = self.memory.write().expect("embedding cache poisoned");
            for (key, row) in miss_keys.iter().zip(&fetched) {
                memory.insert(key.clone(), row.clone());
                self.disk_write(key, row);
            }
            drop(memory);
            let memory = self.memory.read().expect("embedding cache poisoned");
            for (i, key) in keys.iter().enumerate() {
                if rows[i].is_none() {
                    rows[i] = memory.get(key).cloned();
                }
            }
        }

        Ok(rows
            .into_iter()
            .map(|r| r.expect("all rows resolved"))
            .collect())
    }

    /// Embed dataset items by text and wrap the result in a matrix.
    pub fn embed_items(
        &self,
        model: &str,
        items: &[crate::data::DatasetItem],
    ) -> Result<EmbeddingMatrix, GatewayError> {
        let texts: Vec<String> = items.iter().map(|i| i.text.clone()).collect();
        let ids: Vec<String> = items.iter().map(|i| i.id.clone()).collect();
        let rows = self.embed(model, &texts)?;
        EmbeddingMatrix::new(model, ids, rows)
    }
}
