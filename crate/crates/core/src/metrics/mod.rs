//! Measurement suite for characterizing generated datasets: self-BLEU,
//! remote-clique, APS, INGF, entity overlap, and length distributions.

pub mod bleu;
pub mod embedding_stats;
pub mod ngram;

pub use bleu::{bleu, self_bleu, tokenize};
pub use embedding_stats::{aps, remote_clique};
pub use ngram::ingf;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DatasetItem;
use crate::gateway::EmbeddingMatrix;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least {needed} items, got {got}")]
    NotEnoughItems { needed: usize, got: usize },
    #[error("zero embedding vector makes pair ({first}, {second}) undefined")]
    ZeroVector { first: usize, second: usize },
}

/// Word-count distribution with fixed-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthHistogram {
    pub bin_width: usize,
    /// bin start (in words) → item count.
    pub bins: BTreeMap<usize, u64>,
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

impl LengthHistogram {
    pub fn compute(items: &[DatasetItem], bin_width: usize) -> Self {
        let lengths: Vec<usize> = items.iter().map(|i| tokenize(&i.text).len()).collect();
        let mut bins = BTreeMap::new();
        for &len in &lengths {
            *bins.entry((len / bin_width) * bin_width).or_insert(0) += 1;
        }
        let mean = if lengths.is_empty() {
            0.0
        } else {
            lengths.iter().sum::<usize>() as f64 / lengths.len() as f64
        };
        Self {
            bin_width,
            bins,
            mean,
            min: lengths.iter().copied().min().unwrap_or(0),
            max: lengths.iter().copied().max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfBleuSummary {
    pub per_item: Vec<f64>,
    pub mean: f64,
}

/// The full diversity report for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub item_count: usize,
    pub remote_clique: f64,
    pub self_bleu: SelfBleuSummary,
    pub aps: f64,
    pub ingf: f64,
    pub length_histogram: LengthHistogram,
}

impl DiversityReport {
    pub fn compute(
        items: &[DatasetItem],
        embeddings: &EmbeddingMatrix,
    ) -> Result<Self, MetricsError> {
        let texts: Vec<String> = items.iter().map(|i| i.text.clone()).collect();
        let (per_item, mean) = self_bleu(&texts, 4)?;
        Ok(Self {
            item_count: items.len(),
            remote_clique: remote_clique(embeddings)?,
            self_bleu: SelfBleuSummary { per_item, mean },
            aps: aps(embeddings)?,
            ingf: ingf(&texts, 2..=4)?,
            length_histogram: LengthHistogram::compute(items, 10),
        })
    }
}

/// Entity overlap between an original and a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub original_entities: usize,
    pub generated_entities: usize,
    pub shared_entities: usize,
    /// `|E_gen ∩ E_orig| / |E_gen|`; 0 when the generated set is empty.
    pub rate: f64,
    /// Set when the generated entity set was empty and the rate defaulted to 0.
    pub generated_empty: bool,
}

impl OverlapReport {
    pub fn from_sets(original: &BTreeSet<String>, generated: &BTreeSet<String>) -> Self {
        let shared = generated.intersection(original).count();
        let generated_empty = generated.is_empty();
        let rate = if generated_empty {
            0.0
        } else {
            shared as f64 / generated.len() as f64
        };
        Self {
            original_entities: original.len(),
            generated_entities: generated.len(),
            shared_entities: shared,
            rate,
            generated_empty,
        }
    }
}

/// Offline entity extraction: maximal capitalized-word runs, case-folded.
/// Deterministic, so overlap numbers are reproducible without a provider.
pub fn heuristic_entities(items: &[DatasetItem]) -> BTreeSet<String> {
    let mut entities = BTreeSet::new();
    for item in items {
        let mut texts: Vec<&str> = vec![&item.text];
        if let Some(choices) = &item.choices {
            texts.extend(choices.iter().map(|c| c.body.as_str()));
        }
        for text in texts {
            for phrase in crate::gateway::mock::capitalized_phrases(text, usize::MAX) {
                entities.insert(phrase.to_lowercase());
            }
        }
    }
    entities
}

/// Entity overlap rate via the offline heuristic extractor.
pub fn entity_overlap(original: &[DatasetItem], generated: &[DatasetItem]) -> OverlapReport {
    OverlapReport::from_sets(
        &heuristic_entities(original),
        &heuristic_entities(generated),
    )
}
