//! Post-processing: difficulty enhancement and group-checking deduplication.

pub mod similarity;

pub use similarity::{build_similarity_matrix, group_check, SimilarityError, SimilarityMatrix};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CallLedger, DatasetItem, Stage};
use crate::gateway::{item_from_record, ChatRequest, Gateway, GatewayError, Message};

/// The four rewrite policies for hardening items. The two choice-level
/// policies only apply to items that have choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyPolicy {
    ParaphraseQuestion,
    AddContext,
    ParaphraseChoices,
    AddChoice,
}

impl DifficultyPolicy {
    pub fn all() -> [DifficultyPolicy; 4] {
        [
            DifficultyPolicy::ParaphraseQuestion,
            DifficultyPolicy::AddContext,
            DifficultyPolicy::ParaphraseChoices,
            DifficultyPolicy::AddChoice,
        ]
    }

    /// The rewrite instruction sent to the model.
    pub fn directive(&self) -> &'static str {
        match self {
            DifficultyPolicy::ParaphraseQuestion => {
                "Reformulate the phrasing to express the same idea with greater sophistication."
            }
            DifficultyPolicy::AddContext => {
                "Integrate additional context or details that, while not directly aiding in the question's resolution, enhance the question's complexity."
            }
            DifficultyPolicy::ParaphraseChoices => {
                "Each option should be rephrased to reflect the same concept or idea as the original. The essence and meaning must be preserved. If an option cannot be paraphrased without altering its meaning, it should remain unchanged."
            }
            DifficultyPolicy::AddChoice => {
                "Introduce a plausible but incorrect option to the existing choices to create ambiguity and require deeper understanding."
            }
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DifficultyPolicy::ParaphraseQuestion => "paraphrase_question",
            DifficultyPolicy::AddContext => "add_context",
            DifficultyPolicy::ParaphraseChoices => "paraphrase_choices",
            DifficultyPolicy::AddChoice => "add_choice",
        }
    }

    pub fn applicable(&self, item: &DatasetItem) -> bool {
        match self {
            DifficultyPolicy::ParaphraseQuestion | DifficultyPolicy::AddContext => true,
            DifficultyPolicy::ParaphraseChoices | DifficultyPolicy::AddChoice => item
                .choices
                .as_ref()
                .is_some_and(|choices| !choices.is_empty()),
        }
    }
}

/// How a policy is picked per item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    Fixed(DifficultyPolicy),
    /// Uniform over the policies applicable to the item, seeded.
    UniformRandom,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GuardViolation {
    #[error("label changed from {original:?} to {rewritten:?}")]
    LabelChanged {
        original: Option<String>,
        rewritten: Option<String>,
    },
    #[error("choice count changed from {original} to {rewritten}")]
    ChoiceCountChanged { original: usize, rewritten: usize },
    #[error("choice keys changed")]
    ChoiceKeysChanged,
    #[error("expected one added choice, got {original} -> {rewritten}")]
    NotOneAddedChoice { original: usize, rewritten: usize },
    #[error("correct choice body missing byte-identically from rewrite")]
    CorrectBodyMissing,
    #[error("rewrite is structurally invalid: {0}")]
    Invalid(String),
}

/// Validate a rewrite against its policy's preservation rules and return the
/// item that should replace the original. For `AddChoice` the label is
/// re-keyed to wherever the original correct body landed.
pub fn apply_policy_guard(
    policy: DifficultyPolicy,
    original: &DatasetItem,
    mut rewrite: DatasetItem,
) -> Result<DatasetItem, GuardViolation> {
    match policy {
        DifficultyPolicy::ParaphraseQuestion | DifficultyPolicy::AddContext => {
            if rewrite.label != original.label {
                return Err(GuardViolation::LabelChanged {
                    original: original.label.clone(),
                    rewritten: rewrite.label.clone(),
                });
            }
            if let (Some(orig), Some(new)) = (&original.choices, &rewrite.choices) {
                if orig.len() != new.len() {
                    return Err(GuardViolation::ChoiceCountChanged {
                        original: orig.len(),
                        rewritten: new.len(),
                    });
                }
            }
        }
        DifficultyPolicy::ParaphraseChoices => {
            let orig = original.choices.as_deref().unwrap_or_default();
            let new = rewrite.choices.as_deref().unwrap_or_default();
            if orig.len() != new.len() {
                return Err(GuardViolation::ChoiceCountChanged {
                    original: orig.len(),
                    rewritten: new.len(),
                });
            }
            if orig.iter().zip(new).any(|(a, b)| a.key != b.key) {
                return Err(GuardViolation::ChoiceKeysChanged);
            }
            if rewrite.label != original.label {
                return Err(GuardViolation::LabelChanged {
                    original: original.label.clone(),
                    rewritten: rewrite.label.clone(),
                });
            }
        }
        DifficultyPolicy::AddChoice => {
            let orig = original.choices.as_deref().unwrap_or_default();
            let new = rewrite.choices.as_deref().unwrap_or_default();
            if new.len() != orig.len() + 1 {
                return Err(GuardViolation::NotOneAddedChoice {
                    original: orig.len(),
                    rewritten: new.len(),
                });
            }
            let correct_body = original
                .correct_choice_body()
                .ok_or_else(|| GuardViolation::Invalid("original has no correct choice".into()))?;
            let landed = new
                .iter()
                .find(|c| c.body == correct_body)
                .ok_or(GuardViolation::CorrectBodyMissing)?;
            rewrite.label = Some(landed.key.clone());
        }
    }
    rewrite
        .validate()
        .map_err(|e| GuardViolation::Invalid(e.to_string()))?;
    Ok(rewrite)
}

/// Rewrite one item to be harder under `policy`. On any guard violation the
/// original item is returned unchanged and the violation reported alongside.
pub fn enhance_difficulty(
    gateway: &Gateway,
    model: &str,
    item: &DatasetItem,
    policy: DifficultyPolicy,
    ledger: &mut CallLedger,
) -> Result<(DatasetItem, Option<GuardViolation>), GatewayError> {
    debug_assert!(policy.applicable(item));
    let prompt = gateway.templates().render(
        "difficulty_enhance",
        &[
            ("policy_directive", policy.directive()),
            ("example", &item.prompt_json()),
        ],
    )?;
    let request = ChatRequest::new(model, vec![Message::user(prompt)]);
    let completion = gateway.chat_logged(Stage::Difficulty, &item.id, &request, ledger)?;
    let payload = match crate::gateway::extract_json_payload(&completion.text) {
        Ok(value) => value,
        Err(_) => {
            return Ok((
                item.clone(),
                Some(GuardViolation::Invalid("unparseable rewrite".into())),
            ))
        }
    };
    let record = crate::gateway::payload_records(payload)
        .into_iter()
        .next()
        .unwrap_or(serde_json::Value::Null);
    let rewrite = match item_from_record(&item.id, &record) {
        Ok(mut rewritten) => {
            rewritten.meta = item.meta.clone();
            rewritten
        }
        Err(e) => {
            return Ok((item.clone(), Some(GuardViolation::Invalid(e))));
        }
    };
    match apply_policy_guard(policy, item, rewrite) {
        Ok(mut accepted) => {
            accepted
                .meta
                .insert("difficulty_policy".into(), policy.as_str().into());
            accepted.record_stage("difficulty");
            Ok((accepted, None))
        }
        Err(violation) => {
            log::warn!("difficulty rewrite for {} rejected: {violation}", item.id);
            Ok((item.clone(), Some(violation)))
        }
    }
}

/// Pick the policy for an item: the fixed one, or uniform over applicable
/// policies with an item-keyed seed.
pub fn choose_policy(
    choice: PolicyChoice,
    item: &DatasetItem,
    seed: u64,
    item_index: usize,
) -> Option<DifficultyPolicy> {
    match choice {
        PolicyChoice::Fixed(policy) => policy.applicable(item).then_some(policy),
        PolicyChoice::UniformRandom => {
            let applicable: Vec<DifficultyPolicy> = DifficultyPolicy::all()
                .into_iter()
                .filter(|p| p.applicable(item))
                .collect();
            if applicable.is_empty() {
                return None;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (item_index as u64) << 17);
            Some(applicable[rng.random_range(0..applicable.len())])
        }
    }
}
