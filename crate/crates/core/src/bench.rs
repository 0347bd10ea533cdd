//! Model evaluation on generated datasets via LLM-as-judge, plus constraint
//! compliance auditing.
//!
//! Mechanical constraints (length, option count, language script) also get
//! local deterministic checkers that run alongside the judge and are reported
//! separately, so the compliance path is testable without a provider.

use serde::{Deserialize, Serialize};

use crate::data::{AnswerFormat, CallLedger, DatasetDescriptor, DatasetItem, Stage};
use crate::gateway::{extract_json_payload, ChatRequest, Gateway, GatewayError, Message};
use crate::par::parallel_map;

/// Parsed judge reply, per the evaluation schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub model_final_answer: String,
    pub groundtruth_answer: String,
    pub is_same: bool,
}

/// One evaluated item. `verdict` is `None` when the judge reply failed to
/// parse; such items are excluded from the accuracy denominator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemVerdict {
    pub item_id: String,
    pub candidate_answer: String,
    pub verdict: Option<JudgeVerdict>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub correct: usize,
    pub scored: usize,
    pub unscored: usize,
}

fn format_directive(format: AnswerFormat) -> &'static str {
    match format {
        AnswerFormat::MultipleChoice => " Reply with the key of the correct option.",
        AnswerFormat::Numeric => " Reply with the final number only.",
        AnswerFormat::Boolean => " Reply with true or false.",
        AnswerFormat::FreeText => "",
    }
}

/// The question as shown to the candidate and the judge: item text plus the
/// option list when present.
fn question_block(item: &DatasetItem) -> String {
    let mut out = item.text.clone();
    if let Some(choices) = &item.choices {
        for choice in choices {
            out.push('\n');
            out.push_str(&format!("{}. {}", choice.key, choice.body));
        }
    }
    out
}

fn parse_judge(text: &str) -> Option<JudgeVerdict> {
    let payload = extract_json_payload(text).ok()?;
    Some(JudgeVerdict {
        model_final_answer: payload.get("Model Final Answer")?.as_str()?.to_string(),
        groundtruth_answer: payload.get("Groundtruth Answer")?.as_str()?.to_string(),
        is_same: payload.get("is_same")?.as_bool()?,
    })
}

/// Evaluate `candidate_model` on a labeled dataset, scoring each answer with
/// `judge_model`. Accuracy is `correct / scored`; unscored items (judge format
/// errors) are counted but excluded from the denominator.
pub fn evaluate_model(
    gateway: &Gateway,
    items: &[DatasetItem],
    descriptor: &DatasetDescriptor,
    candidate_model: &str,
    judge_model: &str,
    max_worker: usize,
    ledger: &mut CallLedger,
) -> Result<(Vec<ItemVerdict>, EvalSummary), GatewayError> {
    let results = parallel_map(items, max_worker, |_, item| {
        let mut local = CallLedger::new();
        let verdict = evaluate_one(
            gateway,
            item,
            descriptor,
            candidate_model,
            judge_model,
            &mut local,
        );
        (verdict, local)
    });

    let mut verdicts = Vec::with_capacity(items.len());
    for (result, local) in results {
        ledger.extend(local);
        verdicts.push(result?);
    }
    let scored = verdicts.iter().filter(|v| v.verdict.is_some()).count();
    let correct = verdicts
        .iter()
        .filter(|v| v.verdict.as_ref().is_some_and(|j| j.is_same))
        .count();
    let summary = EvalSummary {
        accuracy: if scored == 0 {
            0.0
        } else {
            correct as f64 / scored as f64
        },
        correct,
        scored,
        unscored: verdicts.len() - scored,
    };
    Ok((verdicts, summary))
}

fn evaluate_one(
    gateway: &Gateway,
    item: &DatasetItem,
    descriptor: &DatasetDescriptor,
    candidate_model: &str,
    judge_model: &str,
    ledger: &mut CallLedger,
) -> Result<ItemVerdict, GatewayError> {
    let question = question_block(item);
    let answer_prompt = gateway.templates().render(
        "candidate_answer",
        &[
            (
                "format_directive",
                format_directive(descriptor.answer_format),
            ),
            ("question", question.as_str()),
        ],
    )?;
    let candidate = gateway.chat_logged(
        Stage::CandidateAnswer,
        &item.id,
        &ChatRequest::new(candidate_model, vec![Message::user(answer_prompt)]),
        ledger,
    )?;
    let solution = candidate.text.trim().to_string();

    let label = item.label.clone().unwrap_or_default();
    let judge_prompt = gateway.templates().render(
        "judge_evaluation",
        &[
            ("question", question.as_str()),
            ("solution", solution.as_str()),
            ("correct answer", label.as_str()),
        ],
    )?;
    let judged = gateway.chat_logged(
        Stage::Judge,
        &item.id,
        &ChatRequest::new(judge_model, vec![Message::user(judge_prompt)]),
        ledger,
    )?;
    Ok(ItemVerdict {
        item_id: item.id.clone(),
        candidate_answer: solution,
        verdict: parse_judge(&judged.text),
    })
}

/// Constraint compliance over a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceResult {
    pub constraint: String,
    pub checked: usize,
    pub yes: usize,
}

impl ComplianceResult {
    pub fn rate(&self) -> f64 {
        if self.checked == 0 {
            0.0
        } else {
            self.yes as f64 / self.checked as f64
        }
    }
}

/// Judge-based and (when the constraint is mechanical) local rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompliancePair {
    pub judge: ComplianceResult,
    pub local: Option<ComplianceResult>,
}

/// Deterministic checkers for mechanical constraint families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalChecker {
    OptionLongerThan(usize),
    OptionShorterThan(usize),
    QuestionLongerThan(usize),
    QuestionShorterThan(usize),
    OptionCount(usize),
    Script(ScriptKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptKind {
    Cjk,
    Latin,
}

fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn parse_count_word(token: &str) -> Option<usize> {
    const WORDS: &[(&str, usize)] = &[
        ("one", 1),
        ("two", 2),
        ("three", 3),
        ("four", 4),
        ("five", 5),
        ("six", 6),
        ("seven", 7),
        ("eight", 8),
        ("nine", 9),
        ("ten", 10),
    ];
    let cleaned = token.trim_matches(|c: char| !c.is_alphanumeric());
    if let Ok(n) = cleaned.parse::<usize>() {
        return Some(n);
    }
    WORDS
        .iter()
        .find(|(w, _)| cleaned.eq_ignore_ascii_case(w))
        .map(|(_, n)| *n)
}

fn first_number(text: &str) -> Option<usize> {
    text.split_whitespace().find_map(parse_count_word)
}

/// Recognize a mechanical constraint. Topic constraints return `None`: only
/// the judge can check those.
pub fn parse_local_checker(constraint: &str) -> Option<LocalChecker> {
    let lower = constraint.to_lowercase();
    let about_options = lower.contains("option");
    let about_question = lower.contains("question");
    let longer = lower.contains("longer than");
    let shorter = lower.contains("shorter than") || lower.contains("less than");

    if lower.contains("words") && (longer || shorter) {
        let n = first_number(&lower)?;
        return match (about_options, longer) {
            (true, true) => Some(LocalChecker::OptionLongerThan(n)),
            (true, false) => Some(LocalChecker::OptionShorterThan(n)),
            (false, true) if about_question => Some(LocalChecker::QuestionLongerThan(n)),
            (false, false) if about_question => Some(LocalChecker::QuestionShorterThan(n)),
            _ => None,
        };
    }
    if lower.contains("contains") && about_options {
        return Some(LocalChecker::OptionCount(first_number(&lower)?));
    }
    if lower.contains("chinese") {
        return Some(LocalChecker::Script(ScriptKind::Cjk));
    }
    if lower.contains("spanish") || lower.contains("english") {
        return Some(LocalChecker::Script(ScriptKind::Latin));
    }
    None
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32, 0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0x3000..=0x303F)
}

fn dominant_script(text: &str, kind: ScriptKind) -> bool {
    let mut matching = 0usize;
    let mut total = 0usize;
    for c in text.chars() {
        if c.is_alphabetic() || is_cjk(c) {
            total += 1;
            let hit = match kind {
                ScriptKind::Cjk => is_cjk(c),
                ScriptKind::Latin => c.is_ascii_alphabetic(),
            };
            if hit {
                matching += 1;
            }
        }
    }
    total > 0 && matching * 2 > total
}

impl LocalChecker {
    /// Pure, seed-independent check of one item.
    pub fn check(&self, item: &DatasetItem) -> bool {
        let choices = item.choices.as_deref().unwrap_or_default();
        match self {
            LocalChecker::OptionLongerThan(n) => {
                !choices.is_empty() && choices.iter().all(|c| word_count(&c.body) > *n)
            }
            LocalChecker::OptionShorterThan(n) => {
                !choices.is_empty() && choices.iter().all(|c| word_count(&c.body) < *n)
            }
            LocalChecker::QuestionLongerThan(n) => word_count(&item.text) > *n,
            LocalChecker::QuestionShorterThan(n) => word_count(&item.text) < *n,
            LocalChecker::OptionCount(n) => choices.len() == *n,
            LocalChecker::Script(kind) => {
                let mut text = item.text.clone();
                for c in choices {
                    text.push(' ');
                    text.push_str(&c.body);
                }
                dominant_script(&text, *kind)
            }
        }
    }
}

/// Audit one constraint over a corpus: every item is judged YES/NO by the
/// model (unparseable replies count as NO), and mechanical constraints are
/// additionally checked locally.
pub fn check_compliance(
    gateway: &Gateway,
    items: &[DatasetItem],
    constraint: &str,
    judge_model: &str,
    max_worker: usize,
    ledger: &mut CallLedger,
) -> Result<CompliancePair, GatewayError> {
    let results = parallel_map(items, max_worker, |_, item| {
        let mut local = CallLedger::new();
        let yes = judge_one_compliance(gateway, item, constraint, judge_model, &mut local);
        (yes, local)
    });
    let mut yes = 0usize;
    for (result, local) in results {
        ledger.extend(local);
        if result? {
            yes += 1;
        }
    }
    let judge = ComplianceResult {
        constraint: constraint.to_string(),
        checked: items.len(),
        yes,
    };

    let local = parse_local_checker(constraint).map(|checker| ComplianceResult {
        constraint: constraint.to_string(),
        checked: items.len(),
        yes: items.iter().filter(|item| checker.check(item)).count(),
    });
    Ok(CompliancePair { judge, local })
}

fn judge_one_compliance(
    gateway: &Gateway,
    item: &DatasetItem,
    constraint: &str,
    judge_model: &str,
    ledger: &mut CallLedger,
) -> Result<bool, GatewayError> {
    let text = question_block(item);
    let prompt = gateway.templates().render(
        "constraint_compliance",
        &[("constraint", constraint), ("text", text.as_str())],
    )?;
    let completion = gateway.chat_logged(
        Stage::Compliance,
        &item.id,
        &ChatRequest::new(judge_model, vec![Message::user(prompt)]),
        ledger,
    )?;
    match completion.text.trim().to_ascii_uppercase().as_str() {
        "YES" => Ok(true),
        "NO" => Ok(false),
        other => {
            log::warn!("compliance judge replied {other:?}; counting as NO");
            Ok(false)
        }
    }
}
