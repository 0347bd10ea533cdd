//! The per-run ledger of provider calls, token counts, cost, and stage
//! outcomes.
//!
//! Cost is always computed as the sum of the three stage-group subtotals
//! (base, code verification, retrieval validation), and each subtotal is a
//! plain left-fold over its calls in ledger order. Recomputing from the
//! per-call records therefore reproduces the stored totals bit for bit.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::config::GenerationConfig;

/// Pipeline stage that issued a provider call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generation,
    AttributeExtraction,
    Embedding,
    QualityReflect,
    QualityEnhance,
    CodeEval,
    CodeCompare,
    RagKeyword,
    RagRefine,
    Difficulty,
    HumanFeedback,
    CandidateAnswer,
    Judge,
    Compliance,
}

/// Cost reporting group. Base generation, code-based verification, and
/// retrieval-backed validation are broken out separately because the last two
/// dominate per-item cost when enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostGroup {
    Base,
    Code,
    Rag,
}

impl Stage {
    pub fn cost_group(&self) -> CostGroup {
        match self {
            Stage::CodeEval | Stage::CodeCompare => CostGroup::Code,
            Stage::RagKeyword | Stage::RagRefine => CostGroup::Rag,
            _ => CostGroup::Base,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Generation => "generation",
            Stage::AttributeExtraction => "attribute_extraction",
            Stage::Embedding => "embedding",
            Stage::QualityReflect => "quality_reflect",
            Stage::QualityEnhance => "quality_enhance",
            Stage::CodeEval => "code_eval",
            Stage::CodeCompare => "code_compare",
            Stage::RagKeyword => "rag_keyword",
            Stage::RagRefine => "rag_refine",
            Stage::Difficulty => "difficulty",
            Stage::HumanFeedback => "human_feedback",
            Stage::CandidateAnswer => "candidate_answer",
            Stage::Judge => "judge",
            Stage::Compliance => "compliance",
        }
    }
}

/// One provider call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub stage: Stage,
    /// What the call was about, e.g. `iter-3` or `item gen-2-1`.
    pub scope: String,
    pub prompt_sha256: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    pub cost: f64,
}

/// A batch of call records produced by one worker. Workers each fill their own
/// ledger; the manifest merges ledgers in a deterministic order so concurrent
/// runs serialize identically.
#[derive(Debug, Clone, Default)]
pub struct CallLedger {
    records: Vec<CallRecord>,
}

impl CallLedger {
    pub fn new() -> Self {
        Self::default()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &mut self,
        stage: Stage,
        scope: impl Into<String>,
        prompt_sha256: impl Into<String>,
        prompt_tokens: u64,
        completion_tokens: u64,
        latency_ms: u64,
        cost: f64,
    ) {
        self.records.push(CallRecord {
            stage,
            scope: scope.into(),
            prompt_sha256: prompt_sha256.into(),
            prompt_tokens,
            completion_tokens,
            latency_ms,
            cost,
        });
    }

    pub fn records(&self) -> &[CallRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Append every record of `other`, preserving order.
    pub fn extend(&mut self, other: CallLedger) {
        self.records.extend(other.records);
    }
}

/// What one generation iteration used and produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub few_shot_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    pub parsed_items: u64,
    pub format_errors: u64,
}

/// One removal performed by group checking, with the pair that justified it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupeRemoval {
    pub removed_id: String,
    pub kept_id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupeReport {
    pub theta: f64,
    pub removed: Vec<DedupeRemoval>,
    pub survivors: usize,
}

/// Cost split by stage group. `total == base + code + rag` by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub base: f64,
    pub code: f64,
    pub rag: f64,
    pub total: f64,
}

/// Append-only record of everything a run did.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: GenerationConfig,
    pub calls: Vec<CallRecord>,
    /// Counters keyed by event name: format errors, corrections, rejections.
    pub counters: BTreeMap<String, u64>,
    /// Correction ledgers: stage name → corrected item ids.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub corrections: BTreeMap<String, Vec<String>>,
    /// Per-iteration few-shot selections and batch outcomes, in order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub iterations: Vec<IterationRecord>,
    /// Quality-loop enhancement epochs → item count.
    pub epoch_histogram: BTreeMap<u32, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dedupe: Option<DedupeReport>,
    pub iterations_run: u64,
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
    pub cost: CostBreakdown,
}

impl RunManifest {
    pub fn new(run_id: impl Into<String>, config: GenerationConfig) -> Self {
        Self {
            run_id: run_id.into(),
            config,
            calls: Vec::new(),
            counters: BTreeMap::new(),
            corrections: BTreeMap::new(),
            iterations: Vec::new(),
            epoch_histogram: BTreeMap::new(),
            dedupe: None,
            iterations_run: 0,
            total_prompt_tokens: 0,
            total_completion_tokens: 0,
            cost: CostBreakdown {
                base: 0.0,
                code: 0.0,
                rag: 0.0,
                total: 0.0,
            },
        }
    }

    /// Append one call record and fold its cost into the stage-group subtotal.
    pub fn append(&mut self, record: CallRecord) {
        self.total_prompt_tokens += record.prompt_tokens;
        self.total_completion_tokens += record.completion_tokens;
        match record.stage.cost_group() {
            CostGroup::Base => self.cost.base += record.cost,
            CostGroup::Code => self.cost.code += record.cost,
            CostGroup::Rag => self.cost.rag += record.cost,
        }
        self.cost.total = self.cost.base + self.cost.code + self.cost.rag;
        self.calls.push(record);
    }

    /// Merge a worker ledger; records keep their ledger order.
    pub fn merge_ledger(&mut self, ledger: CallLedger) {
        for record in ledger.records {
            self.append(record);
        }
    }

    pub fn bump(&mut self, counter: &str, by: u64) {
        *self.counters.entry(counter.to_string()).or_insert(0) += by;
    }

    pub fn record_epoch(&mut self, epochs: u32) {
        *self.epoch_histogram.entry(epochs).or_insert(0) += 1;
    }

    /// Re-derive the cost breakdown from the per-call records. Equals the
    /// stored breakdown exactly; the acceptance suite asserts this.
    pub fn recompute_cost(&self) -> CostBreakdown {
        let mut base = 0.0;
        let mut code = 0.0;
        let mut rag = 0.0;
        for call in &self.calls {
            match call.stage.cost_group() {
                CostGroup::Base => base += call.cost,
                CostGroup::Code => code += call.cost,
                CostGroup::Rag => rag += call.cost,
            }
        }
        CostBreakdown {
            base,
            code,
            rag,
            total: base + code + rag,
        }
    }

    /// Re-derive total token counts from per-call records.
    pub fn recompute_tokens(&self) -> (u64, u64) {
        let prompt = self.calls.iter().map(|c| c.prompt_tokens).sum();
        let completion = self.calls.iter().map(|c| c.completion_tokens).sum();
        (prompt, completion)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), super::DataError> {
        let mut out = serde_json::to_string_pretty(self).expect("manifest serializes");
        out.push('\n');
        std::fs::write(path.as_ref(), out).map_err(|source| super::DataError::Io {
            path: path.as_ref().display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, super::DataError> {
        let raw =
            std::fs::read_to_string(path.as_ref()).map_err(|source| super::DataError::Io {
                path: path.as_ref().display().to_string(),
                source,
            })?;
        serde_json::from_str(&raw).map_err(|e| super::DataError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }
}

/// Thread-safe manifest handle. The manifest is the only shared mutable state
/// in a run; appends are serialized through this mutex.
#[derive(Debug, Clone)]
pub struct SharedManifest {
    inner: Arc<Mutex<RunManifest>>,
}

impl SharedManifest {
    pub fn new(manifest: RunManifest) -> Self {
        Self {
            inner: Arc::new(Mutex::new(manifest)),
        }
    }

    pub fn with<R>(&self, f: impl FnOnce(&mut RunManifest) -> R) -> R {
        let mut guard = self.inner.lock().expect("manifest lock poisoned");
        f(&mut guard)
    }

    pub fn into_inner(self) -> RunManifest {
        match Arc::try_unwrap(self.inner) {
            Ok(mutex) => mutex.into_inner().expect("manifest lock poisoned"),
            Err(arc) => arc.lock().expect("manifest lock poisoned").clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(stage: Stage, cost: f64) -> CallRecord {
        CallRecord {
            stage,
            scope: "t".into(),
            prompt_sha256: "h".into(),
            prompt_tokens: 100,
            completion_tokens: 50,
            latency_ms: 0,
            cost,
        }
    }

    #[test]
    fn empty_manifest_costs_nothing() {
        let m = RunManifest::new("r", GenerationConfig::new("m", 10, 5));
        assert_eq!(m.cost.total, 0.0);
        assert_eq!(m.recompute_cost().total, 0.0);
    }

    #[test]
    fn recomputed_cost_matches_stored_exactly() {
        let mut m = RunManifest::new("r", GenerationConfig::new("m", 10, 5));
        // Awkward magnitudes on purpose, to exercise float folding.
        let costs = [0.1, 0.2, 0.3, 1e-9, 7.7, 0.0125];
        let stages = [
            Stage::Generation,
            Stage::CodeEval,
            Stage::RagRefine,
            Stage::QualityReflect,
            Stage::CodeCompare,
            Stage::RagKeyword,
        ];
        for (stage, cost) in stages.iter().zip(costs) {
            m.append(record(*stage, cost));
        }
        let recomputed = m.recompute_cost();
        assert_eq!(recomputed.base.to_bits(), m.cost.base.to_bits());
        assert_eq!(recomputed.code.to_bits(), m.cost.code.to_bits());
        assert_eq!(recomputed.rag.to_bits(), m.cost.rag.to_bits());
        assert_eq!(recomputed.total.to_bits(), m.cost.total.to_bits());
        assert_eq!(m.cost.total, m.cost.base + m.cost.code + m.cost.rag);
    }

    #[test]
    fn token_totals_match_per_call_sum() {
        let mut m = RunManifest::new("r", GenerationConfig::new("m", 10, 5));
        for _ in 0..5 {
            m.append(record(Stage::Generation, 0.0));
        }
        let (p, c) = m.recompute_tokens();
        assert_eq!((p, c), (m.total_prompt_tokens, m.total_completion_tokens));
        assert_eq!(p, 500);
    }

    // One fully loaded item (generation + quality + code + retrieval calls)
    // at frontier per-token prices stays under the $0.200 budget, and the
    // stage groups partition the total.
    #[test]
    fn per_item_cost_stays_under_budget_at_frontier_rates() {
        use crate::data::RateCard;
        let mut card = RateCard::default();
        card.insert("frontier", 10.0, 30.0);
        let mut m = RunManifest::new("r", GenerationConfig::new("frontier", 1, 1));
        let call =
            |stage: Stage, prompt: u64, completion: u64, card: &crate::data::RateCard| CallRecord {
                stage,
                scope: "item".into(),
                prompt_sha256: "h".into(),
                prompt_tokens: prompt,
                completion_tokens: completion,
                latency_ms: 0,
                cost: card.cost("frontier", prompt, completion),
            };
        // Base: one fifth of a 5-item batch plus reflection.
        m.append(call(Stage::Generation, 1000, 400, &card));
        m.append(call(Stage::QualityReflect, 800, 150, &card));
        // Code verification: solver synthesis + one compare.
        m.append(call(Stage::CodeEval, 700, 300, &card));
        m.append(call(Stage::CodeCompare, 150, 5, &card));
        // Retrieval validation dominates: two calls carrying retrieved text.
        m.append(call(Stage::RagKeyword, 400, 50, &card));
        m.append(call(Stage::RagRefine, 11_000, 800, &card));
        assert!(m.cost.base <= 0.038 + 1e-12, "base {}", m.cost.base);
        assert!(m.cost.total <= 0.200, "total {}", m.cost.total);
        assert_eq!(m.cost.total, m.cost.base + m.cost.code + m.cost.rag);
    }

    #[test]
    fn shared_manifest_serializes_appends() {
        let shared = SharedManifest::new(RunManifest::new("r", GenerationConfig::new("m", 10, 5)));
        std::thread::scope(|scope| {
            for _ in 0..4 {
                let handle = shared.clone();
                scope.spawn(move || {
                    for _ in 0..100 {
                        handle.with(|m| m.append(record(Stage::Generation, 0.001)));
                    }
                });
            }
        });
        let manifest = shared.into_inner();
        assert_eq!(manifest.calls.len(), 400);
        let recomputed = manifest.recompute_cost();
        assert_eq!(recomputed.total.to_bits(), manifest.cost.total.to_bits());
    }
}
