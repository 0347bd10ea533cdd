//! Code-based label verification for math-style datasets.
//!
//! For each item, the LLM writes a small solver program from the item text;
//! the program runs sandboxed; its final stdout line is compared semantically
//! with the stored label; on a definite conflict the label is replaced with
//! the code-derived answer.

pub mod sandbox;

pub use sandbox::{execute_sandboxed, SandboxError, SandboxResult};

use serde::{Deserialize, Serialize};

use crate::data::{CallLedger, DatasetItem, SandboxConfig, Stage};
use crate::gateway::{extract_json_payload, ChatRequest, Gateway, GatewayError, Message};
use crate::par::parallel_map;

/// A solver program produced from the math-eval template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverProgram {
    pub source: String,
    pub analysis: String,
    pub origin_item_id: String,
}

/// Ask the LLM for a solver program. `None` means the reply was unusable and
/// verification is skipped for this item.
pub fn synthesize_solver(
    gateway: &Gateway,
    model: &str,
    item: &DatasetItem,
    ledger: &mut CallLedger,
) -> Result<Option<SolverProgram>, GatewayError> {
    let prompt = gateway
        .templates()
        .render("math_eval", &[("expression", item.text.as_str())])?;
    let request = ChatRequest::new(model, vec![Message::user(prompt)]);
    let completion = gateway.chat_logged(Stage::CodeEval, &item.id, &request, ledger)?;
    let Ok(payload) = extract_json_payload(&completion.text) else {
        log::warn!(
            "item {}: solver reply had no JSON; skipping verification",
            item.id
        );
        return Ok(None);
    };
    let Some(source) = payload.get("Code").and_then(|c| c.as_str()) else {
        log::warn!("item {}: solver reply has no Code key; skipping", item.id);
        return Ok(None);
    };
    if source.trim().is_empty() {
        return Ok(None);
    }
    Ok(Some(SolverProgram {
        source: source.to_string(),
        analysis: payload
            .get("Analysis")
            .and_then(|a| a.as_str())
            .unwrap_or_default()
            .to_string(),
        origin_item_id: item.id.clone(),
    }))
}

/// Three-way comparison outcome. `Inconclusive` (the judge reply was
/// unusable) never triggers replacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Equivalence {
    Equal,
    Different,
    Inconclusive,
}

/// Numeric normalization: trim, drop a leading currency sign, drop digit
/// group commas, then parse.
fn parse_number(answer: &str) -> Option<f64> {
    let cleaned = answer
        .trim()
        .trim_start_matches('$')
        .replace(',', "")
        .trim_end_matches(['.', '%'])
        .to_string();
    cleaned.parse::<f64>().ok()
}

/// Local comparison: exact after trimming, or numerically equal within a
/// relative tolerance of 1e-9. `None` means the local check cannot decide.
pub fn locally_equal(a: &str, b: &str) -> Option<bool> {
    if a.trim() == b.trim() {
        return Some(true);
    }
    match (parse_number(a), parse_number(b)) {
        (Some(x), Some(y)) => {
            let scale = x.abs().max(y.abs()).max(1.0);
            Some((x - y).abs() <= 1e-9 * scale)
        }
        _ => None,
    }
}

/// Full semantic comparison: the local check first, then the LLM compare
/// template parsed strictly as `True`/`False`.
pub fn semantically_equal(
    gateway: &Gateway,
    model: &str,
    a: &str,
    b: &str,
    scope: &str,
    ledger: &mut CallLedger,
) -> Result<Equivalence, GatewayError> {
    if let Some(verdict) = locally_equal(a, b) {
        return Ok(if verdict {
            Equivalence::Equal
        } else {
            Equivalence::Different
        });
    }
    let prompt = gateway
        .templates()
        .render("math_eval_compare", &[("response1", a), ("response2", b)])?;
    let request = ChatRequest::new(model, vec![Message::user(prompt)]);
    let completion = gateway.chat_logged(Stage::CodeCompare, scope, &request, ledger)?;
    Ok(match completion.text.trim() {
        "True" => Equivalence::Equal,
        "False" => Equivalence::Different,
        other => {
            log::warn!("compare judge replied {other:?}; treating as inconclusive");
            Equivalence::Inconclusive
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconcileOutcome {
    /// Label agreed with the code answer.
    Verified,
    /// Label conflicted and was replaced with the code answer.
    Corrected,
    /// Comparison was inconclusive; logged for review, label untouched.
    ReviewNeeded,
}

/// Apply the replacement rule. Idempotent: once the label equals the
/// candidate, another application changes nothing.
pub fn reconcile(
    item: &mut DatasetItem,
    candidate: &str,
    equivalence: Equivalence,
) -> ReconcileOutcome {
    match equivalence {
        Equivalence::Equal => {
            item.meta.insert("code_verified".into(), "true".into());
            ReconcileOutcome::Verified
        }
        Equivalence::Different => {
            let old = item.label.clone().unwrap_or_default();
            item.meta.insert("old_label".into(), old);
            item.meta.insert("code_corrected".into(), "true".into());
            item.meta.insert("code_verified".into(), "true".into());
            item.label = Some(candidate.to_string());
            ReconcileOutcome::Corrected
        }
        Equivalence::Inconclusive => {
            item.meta.insert("code_review_needed".into(), "true".into());
            ReconcileOutcome::ReviewNeeded
        }
    }
}

/// Per-corpus verification statistics for the manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierStats {
    pub verified: u64,
    pub corrected_ids: Vec<String>,
    pub review_needed: u64,
    /// Items skipped: unusable solver reply, sandbox failure, or no candidate.
    pub skipped: u64,
}

/// Verify every item of a corpus, in parallel up to `max_worker`. Each item
/// keeps its original label unless the sandbox produced a definite conflict.
pub fn verify_dataset(
    gateway: &Gateway,
    model: &str,
    items: &mut [DatasetItem],
    sandbox_config: &SandboxConfig,
    max_worker: usize,
    ledger: &mut CallLedger,
) -> Result<VerifierStats, GatewayError> {
    let snapshot: Vec<DatasetItem> = items.to_vec();
    let results = parallel_map(&snapshot, max_worker, |_, item| {
        let mut local = CallLedger::new();
        let outcome = verify_one(gateway, model, item, sandbox_config, &mut local);
        (outcome, local)
    });

    let mut stats = VerifierStats::default();
    for ((result, local), item) in results.into_iter().zip(items.iter_mut()) {
        ledger.extend(local);
        match result? {
            Some((candidate, equivalence)) => {
                match reconcile(item, &candidate, equivalence) {
                    ReconcileOutcome::Verified => stats.verified += 1,
                    ReconcileOutcome::Corrected => stats.corrected_ids.push(item.id.clone()),
                    ReconcileOutcome::ReviewNeeded => stats.review_needed += 1,
                }
                item.record_stage("code_verification");
            }
            None => stats.skipped += 1,
        }
    }
    Ok(stats)
}

type VerifyOne = Option<(String, Equivalence)>;

fn verify_one(
    gateway: &Gateway,
    model: &str,
    item: &DatasetItem,
    sandbox_config: &SandboxConfig,
    ledger: &mut CallLedger,
) -> Result<VerifyOne, GatewayError> {
    let Some(program) = synthesize_solver(gateway, model, item, ledger)? else {
        return Ok(None);
    };
    let result = match execute_sandboxed(&program.source, sandbox_config) {
        Ok(result) => result,
        Err(e) => {
            log::warn!(
                "item {}: sandbox error: {e}; keeping original label",
                item.id
            );
            return Ok(None);
        }
    };
    let Some(candidate) = result.answer_candidate() else {
        log::warn!(
            "item {}: no answer candidate (timed_out={}, exit={:?})",
            item.id,
            result.timed_out,
            result.exit_code
        );
        return Ok(None);
    };
    let label = item.label.clone().unwrap_or_default();
    let equivalence = semantically_equal(gateway, model, &label, &candidate, &item.id, ledger)?;
    Ok(Some((candidate, equivalence)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_comparison_handles_numeric_forms() {
        assert_eq!(locally_equal("90", "90.0"), Some(true));
        assert_eq!(locally_equal("90", "91"), Some(false));
        assert_eq!(locally_equal(" 1,000 ", "1000"), Some(true));
        assert_eq!(locally_equal("$35", "35"), Some(true));
        assert_eq!(locally_equal("same words", "same words"), Some(true));
        assert_eq!(locally_equal("2", "two"), None);
    }

    #[test]
    fn judge_resolves_word_numbers() {
        let gateway = Gateway::offline(3);
        let mut ledger = CallLedger::new();
        let verdict = semantically_equal(&gateway, "mock", "2", "two", "t", &mut ledger).unwrap();
        assert_eq!(verdict, Equivalence::Equal);
        let verdict = semantically_equal(&gateway, "mock", "2", "three", "t", &mut ledger).unwrap();
        assert_eq!(verdict, Equivalence::Different);
        // Local fast path: no judge call for plainly numeric answers.
        assert_eq!(ledger.records().len(), 2);
    }

    #[test]
    fn garbage_judge_reply_is_inconclusive() {
        let gateway = Gateway::new(
            Box::new(
                crate::gateway::MockChatProvider::new(0)
                    .with_rule("semantically equivalent", "Probably?"),
            ),
            crate::gateway::EmbeddingStore::new(Box::new(crate::gateway::MockEmbedder::default())),
            crate::gateway::TemplateSet::builtin(),
            crate::data::RateCard::default(),
            2,
        );
        let mut ledger = CallLedger::new();
        let verdict = semantically_equal(&gateway, "mock", "2", "two", "t", &mut ledger).unwrap();
        assert_eq!(verdict, Equivalence::Inconclusive);
    }

    #[test]
    fn reconcile_replaces_only_on_conflict() {
        let mut item = DatasetItem::new("x", "q").with_label("85");
        let outcome = reconcile(&mut item, "90", Equivalence::Different);
        assert_eq!(outcome, ReconcileOutcome::Corrected);
        assert_eq!(item.label.as_deref(), Some("90"));
        assert_eq!(item.meta["old_label"], "85");

        // Idempotence: the same candidate a second time changes nothing.
        let before = item.clone();
        let outcome = reconcile(&mut item, "90", Equivalence::Equal);
        assert_eq!(outcome, ReconcileOutcome::Verified);
        assert_eq!(item.label, before.label);
        assert_eq!(item.meta["old_label"], "85");
    }

    #[test]
    fn reconcile_keeps_label_when_inconclusive() {
        let mut item = DatasetItem::new("x", "q").with_label("85");
        let outcome = reconcile(&mut item, "90", Equivalence::Inconclusive);
        assert_eq!(outcome, ReconcileOutcome::ReviewNeeded);
        assert_eq!(item.label.as_deref(), Some("85"));
        assert_eq!(item.meta["code_review_needed"], "true");
    }

    #[test]
    fn solver_with_missing_code_key_is_skipped() {
        let gateway = Gateway::new(
            Box::new(
                crate::gateway::MockChatProvider::new(0)
                    .with_rule("key `Code'", r#"{"Analysis": "no code here"}"#),
            ),
            crate::gateway::EmbeddingStore::new(Box::new(crate::gateway::MockEmbedder::default())),
            crate::gateway::TemplateSet::builtin(),
            crate::data::RateCard::default(),
            2,
        );
        let mut ledger = CallLedger::new();
        let item = DatasetItem::new("x", "what is 1 + 1?").with_label("2");
        let program = synthesize_solver(&gateway, "mock", &item, &mut ledger).unwrap();
        assert!(program.is_none());
    }

    #[test]
    fn solver_round_trip_through_shell_sandbox() {
        let gateway = Gateway::new(
            Box::new(crate::gateway::MockChatProvider::new(0).with_rule(
                "key `Code'",
                r#"{"Code": "echo $((35+35*2-15))", "Analysis": "arithmetic"}"#,
            )),
            crate::gateway::EmbeddingStore::new(Box::new(crate::gateway::MockEmbedder::default())),
            crate::gateway::TemplateSet::builtin(),
            crate::data::RateCard::default(),
            2,
        );
        let config = SandboxConfig {
            interpreter: vec!["sh".into()],
            timeout_secs: 5,
            output_cap_bytes: 4096,
        };
        let mut items = vec![DatasetItem::new("x", "points puzzle").with_label("85")];
        let mut ledger = CallLedger::new();
        let stats = verify_dataset(&gateway, "mock", &mut items, &config, 2, &mut ledger).unwrap();
        assert_eq!(stats.corrected_ids, vec!["x".to_string()]);
        assert_eq!(items[0].label.as_deref(), Some("90"));
    }
}
