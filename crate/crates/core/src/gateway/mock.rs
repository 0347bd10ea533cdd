//! Deterministic offline providers.
//!
//! The mock chat provider answers every pipeline prompt with a response that
//! is a pure function of (provider seed, prompt bytes): the prompt is hashed,
//! the hash seeds a ChaCha stream, and the response is synthesized from fixed
//! word pools. Explicit substring rules can override any stage for tests. The
//! mock embedder maps each text to a seeded pseudo-random unit vector.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::provider::{
    estimate_tokens, ChatProvider, ChatRequest, Completion, EmbeddingProvider, GatewayError,
    TokenUsage,
};

pub(crate) fn sha256_hex(data: &str) -> String {
    let digest = Sha256::digest(data.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

fn seed_from(seed: u64, text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes) ^ seed
}

/// Substring-triggered canned response; checked before the scripted handlers.
#[derive(Debug, Clone)]
pub struct MockRule {
    pub contains: String,
    pub response: String,
}

/// Deterministic chat provider for offline runs and tests.
#[derive(Debug, Clone)]
pub struct MockChatProvider {
    seed: u64,
    rules: Vec<MockRule>,
    /// Fraction of generated batch records emitted without a label.
    pub invalid_record_rate: f64,
    /// Fraction of self-reflections that come back `isgood: no`.
    pub reflect_reject_rate: f64,
    /// Fraction of difficulty rewrites that deliberately violate the policy
    /// guards, for exercising the guard path.
    pub guard_violation_rate: f64,
    pub context_window: usize,
}

const SUBJECTS: &[&str] = &[
    "the committee",
    "a traveler",
    "the engineer",
    "a historian",
    "the orchestra",
    "a biologist",
    "the merchant",
    "a student",
    "the captain",
    "an astronomer",
];
const VERBS: &[&str] = &[
    "examines",
    "describes",
    "questions",
    "measures",
    "compares",
    "records",
    "predicts",
    "challenges",
    "summarizes",
    "observes",
];
const OBJECTS: &[&str] = &[
    "an ancient map",
    "a chemical reaction",
    "the tidal pattern",
    "a musical scale",
    "the trade route",
    "a fossil record",
    "the voting system",
    "a quiet harbor",
    "the mountain pass",
    "an old manuscript",
];
const ANSWER_WORDS: &[&str] = &[
    "granite", "harbor", "cobalt", "meridian", "sonata", "glacier", "lantern", "orchard",
];

impl MockChatProvider {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rules: Vec::new(),
            invalid_record_rate: 0.0,
            reflect_reject_rate: 0.0,
            guard_violation_rate: 0.0,
            context_window: 128_000,
        }
    }

    pub fn with_rule(mut self, contains: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(MockRule {
            contains: contains.into(),
            response: response.into(),
        });
        self
    }

    pub fn with_invalid_record_rate(mut self, rate: f64) -> Self {
        self.invalid_record_rate = rate;
        self
    }

    pub fn with_reflect_reject_rate(mut self, rate: f64) -> Self {
        self.reflect_reject_rate = rate;
        self
    }

    pub fn with_guard_violation_rate(mut self, rate: f64) -> Self {
        self.guard_violation_rate = rate;
        self
    }

    pub fn with_context_window(mut self, window: usize) -> Self {
        self.context_window = window;
        self
    }

    fn respond(&self, prompt: &str) -> String {
        for rule in &self.rules {
            if prompt.contains(&rule.contains) {
                return rule.response.clone();
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from(self.seed, prompt));

        if prompt.contains("semantically equivalent") {
            return self.answer_compare(prompt);
        }
        if prompt.contains("key `Code' for the executable code") {
            return r#"{"Code": "print(0)", "Analysis": "no arithmetic recognized; defaulting"}"#
                .to_string();
        }
        if prompt.contains("identify key entities") {
            return self.answer_entities(prompt);
        }
        if prompt.contains("is_original_example_good") {
            // The template itself spells the verdict "Ture"; the parser must cope.
            return r#"{"thinking_progress": "the entry is consistent with the evidence", "is_original_example_good": "Ture", "refined_text": "NONE"}"#.to_string();
        }
        if prompt.contains("Provide your evaluation in string format") {
            let isgood = if rng.random::<f64>() < self.reflect_reject_rate {
                "no"
            } else {
                "yes"
            };
            let reflection = if isgood == "yes" {
                "clear phrasing and an unambiguous answer"
            } else {
                "the question is too shallow; add a complication"
            };
            return format!(r#"{{"reflection": "{reflection}", "isgood": "{isgood}"}}"#);
        }
        if prompt.contains("create improved versions of the original example") {
            return self.answer_enhancement(prompt);
        }
        if prompt.contains("Based on human feedback") {
            return self.answer_feedback(prompt);
        }
        if prompt.contains("increase the difficulty") {
            return self.answer_difficulty(prompt, &mut rng);
        }
        if prompt.contains("Your task is to compare a model-generated answer") {
            return self.answer_judge(prompt);
        }
        if prompt.contains("Only reply YES or NO") {
            return "YES".to_string();
        }
        if prompt.contains("Answer the following question.") {
            return "A".to_string();
        }
        if prompt.contains("adding a key named \"category\"") {
            return r#"[{"category": ["history"]}, {"category": ["science"]}, {"category": ["sports"]}, {"category": ["economics"]}]"#.to_string();
        }
        if prompt.contains("The number of entries to be generated is") {
            return self.answer_generation(prompt, &mut rng);
        }
        format!("mock reply {}", &sha256_hex(prompt)[..12])
    }

    fn answer_compare(&self, prompt: &str) -> String {
        let (a, b) = match parse_compare_operands(prompt) {
            Some(pair) => pair,
            None => return "False".to_string(),
        };
        let same = normalize_answer_word(&a) == normalize_answer_word(&b);
        if same { "True" } else { "False" }.to_string()
    }

    fn answer_entities(&self, prompt: &str) -> String {
        let text = prompt
            .split("My text: ")
            .nth(1)
            .unwrap_or("")
            .lines()
            .next()
            .unwrap_or("");
        let entities = capitalized_phrases(text, 3);
        let quoted: Vec<String> = entities.iter().map(|e| format!("\"{e}\"")).collect();
        format!(r#"{{"entities":[{}]}}"#, quoted.join(","))
    }

    fn answer_enhancement(&self, prompt: &str) -> String {
        match extract_section_json(prompt, "Original Example: ") {
            Some(mut value) => {
                if let Some(text) = value.get("text").and_then(|t| t.as_str()) {
                    let improved = format!("{text} Consider every detail carefully.");
                    value["text"] = serde_json::Value::String(improved);
                }
                value.to_string()
            }
            None => r#"{"text": "improved example"}"#.to_string(),
        }
    }

    fn answer_feedback(&self, prompt: &str) -> String {
        let feedback = prompt
            .split("HUMAN_FEEDBACK: ")
            .nth(1)
            .and_then(|s| s.lines().next())
            .unwrap_or("");
        match extract_section_json(prompt, "EXAMPLE: ") {
            Some(mut value) => {
                if let Some(text) = value.get("text").and_then(|t| t.as_str()) {
                    value["text"] =
                        serde_json::Value::String(format!("{text} (revised: {feedback})"));
                }
                format!(r#"{{"improved_example": {value}}}"#)
            }
            None => r#"{"improved_example": "CONTENT"}"#.to_string(),
        }
    }

    fn answer_difficulty(&self, prompt: &str, rng: &mut ChaCha8Rng) -> String {
        let violate = rng.random::<f64>() < self.guard_violation_rate;
        let mut value = match extract_section_json(prompt, "EXAMPLE: ") {
            Some(v) => v,
            None => return r#"{"text": "harder example"}"#.to_string(),
        };
        let label = value
            .get("label")
            .and_then(|l| l.as_str())
            .map(str::to_string);
        if prompt.contains("Reformulate the phrasing")
            || prompt.contains("Integrate additional context")
        {
            if let Some(text) = value.get("text").and_then(|t| t.as_str()) {
                let harder = if prompt.contains("Reformulate") {
                    format!("Restated with more rigor: {text}")
                } else {
                    format!("In a setting with several distracting details, {text}")
                };
                value["text"] = serde_json::Value::String(harder);
            }
            if violate {
                if let Some(l) = &label {
                    value["label"] = serde_json::Value::String(format!("{l}X"));
                }
            }
        } else if prompt.contains("Each option should be rephrased") {
            if let Some(choices) = value.get_mut("choices").and_then(|c| c.as_array_mut()) {
                for choice in choices.iter_mut() {
                    if let Some(body) = choice.get("body").and_then(|b| b.as_str()) {
                        let re = format!("Put differently, {body}");
                        choice["body"] = serde_json::Value::String(re);
                    }
                }
                if violate && !choices.is_empty() {
                    choices.remove(0);
                }
            }
        } else if prompt.contains("Introduce a plausible but incorrect option") {
            if let Some(choices) = value.get_mut("choices").and_then(|c| c.as_array_mut()) {
                let next_key = crate::data::auto_choice_key(choices.len());
                if violate {
                    // Corrupt the correct option's body; the guard must catch this.
                    if let Some(l) = &label {
                        for choice in choices.iter_mut() {
                            if choice.get("key").and_then(|k| k.as_str()) == Some(l.as_str()) {
                                if let Some(body) = choice.get("body").and_then(|b| b.as_str()) {
                                    let altered = format!("{body} (altered)");
                                    choice["body"] = serde_json::Value::String(altered);
                                }
                            }
                        }
                    }
                }
                choices.push(serde_json::json!({
                    "key": next_key,
                    "body": "A plausible but incorrect alternative"
                }));
            }
        }
        value.to_string()
    }

    fn answer_judge(&self, prompt: &str) -> String {
        let solution = line_after(prompt, "- Model generated answer: ").unwrap_or_default();
        let truth = line_after(prompt, "- Groundtruth answer: ").unwrap_or_default();
        let same = normalize_answer_word(&solution) == normalize_answer_word(&truth);
        format!(
            r#"{{"Model Final Answer": "{solution}", "Groundtruth Answer": "{truth}", "is_same": {same}}}"#
        )
    }

    fn answer_generation(&self, prompt: &str, rng: &mut ChaCha8Rng) -> String {
        let count = line_after(prompt, "The number of entries to be generated is ")
            .and_then(|line| {
                line.trim_end_matches(|c: char| !c.is_ascii_digit())
                    .trim()
                    .parse::<usize>()
                    .ok()
            })
            .unwrap_or(1);
        let topic = prompt
            .split("related to the following attribute: ")
            .nth(1)
            .and_then(|s| s.split('.').next())
            .unwrap_or("general knowledge")
            .to_string();
        let multiple_choice = prompt.contains("KEY OF THE CORRECT OPTION");
        let numeric = prompt.contains("FINAL NUMERIC ANSWER");
        let boolean = prompt.contains("true OR false");
        let labeled = !prompt.contains("GENERATED TEXT");

        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let tag: u32 = rng.random();
            let subject = SUBJECTS[rng.random_range(0..SUBJECTS.len())];
            let verb = VERBS[rng.random_range(0..VERBS.len())];
            let object = OBJECTS[rng.random_range(0..OBJECTS.len())];
            let drop_label = rng.random::<f64>() < self.invalid_record_rate;
            let record = if numeric {
                let a = rng.random_range(3..40u32);
                let b = rng.random_range(2..12u32);
                let text = format!(
                    "While {subject} {verb} {object} about {topic}, a vendor packs {a} crates with {b} items each. How many items are packed in total? (case {tag:08x})"
                );
                let mut obj = serde_json::json!({ "text": text });
                if !drop_label {
                    obj["label"] = serde_json::Value::String((a * b).to_string());
                }
                obj
            } else if multiple_choice {
                let correct = rng.random_range(0..4usize);
                let keys = ["A", "B", "C", "D"];
                let mut choices = Vec::new();
                for (i, key) in keys.iter().enumerate() {
                    let detail = ANSWER_WORDS[rng.random_range(0..ANSWER_WORDS.len())];
                    let body = if i == correct {
                        format!("Because {subject} correctly {verb} {object}")
                    } else {
                        format!("An unlikely account involving {detail}")
                    };
                    choices.push(serde_json::json!({"key": key, "body": body}));
                }
                let text = format!(
                    "Regarding {topic}, what happens when {subject} {verb} {object}? (case {tag:08x})"
                );
                let mut obj = serde_json::json!({ "text": text, "choices": choices });
                if !drop_label {
                    obj["label"] = serde_json::Value::String(keys[correct].to_string());
                }
                obj
            } else if boolean {
                let truth = rng.random::<bool>();
                let text = format!(
                    "True or false: {subject} {verb} {object} related to {topic}. (case {tag:08x})"
                );
                let mut obj = serde_json::json!({ "text": text });
                if !drop_label {
                    obj["label"] = serde_json::Value::String(truth.to_string());
                }
                obj
            } else {
                let text = format!(
                    "Describe how {subject} {verb} {object} in the context of {topic}. (case {tag:08x})"
                );
                let mut obj = serde_json::json!({ "text": text });
                if labeled && !drop_label {
                    let word = ANSWER_WORDS[rng.random_range(0..ANSWER_WORDS.len())];
                    obj["label"] = serde_json::Value::String(word.to_string());
                }
                obj
            };
            records.push(record);
        }
        serde_json::Value::Array(records).to_string()
    }
}

impl ChatProvider for MockChatProvider {
    fn chat(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        request.validate()?;
        let prompt = request.flattened();
        let estimated = estimate_tokens(&prompt);
        if estimated > self.context_window {
            return Err(GatewayError::TokenLimit {
                estimated,
                limit: self.context_window,
            });
        }
        let text = self.respond(&prompt);
        let usage = TokenUsage {
            prompt_tokens: estimated as u64,
            completion_tokens: estimate_tokens(&text) as u64,
        };
        Ok(Completion {
            text,
            usage,
            latency_ms: 0,
        })
    }
}

/// Mock embedder: each (model, text) pair maps to a fixed pseudo-random unit
/// vector, stable across runs and processes.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    pub dim: usize,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self { dim: 32 }
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        Ok(texts
            .iter()
            .map(|text| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed_from(0x5eed, &format!("{model}\u{1}{text}")));
                let mut v: Vec<f64> = (0..self.dim).map(|_| rng.random::<f64>() - 0.5).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for x in &mut v {
                        *x /= norm;
                    }
                }
                v
            })
            .collect())
    }
}

fn line_after(text: &str, prefix: &str) -> Option<String> {
    text.split(prefix)
        .nth(1)
        .and_then(|s| s.lines().next())
        .map(|s| s.trim().to_string())
}

fn parse_compare_operands(prompt: &str) -> Option<(String, String)> {
    let tail = prompt.split("Here are two responses: `").nth(1)?;
    let (first, rest) = tail.split_once("', `")?;
    let second = rest.split("'.").next()?;
    Some((first.to_string(), second.to_string()))
}

/// Fold number words and casing so the mock judge behaves like a lenient human.
fn normalize_answer_word(answer: &str) -> String {
    let lowered = answer.trim().to_lowercase();
    const WORDS: &[(&str, &str)] = &[
        ("zero", "0"),
        ("one", "1"),
        ("two", "2"),
        ("three", "3"),
        ("four", "4"),
        ("five", "5"),
        ("six", "6"),
        ("seven", "7"),
        ("eight", "8"),
        ("nine", "9"),
        ("ten", "10"),
        ("eleven", "11"),
        ("twelve", "12"),
        ("ninety", "90"),
    ];
    for (word, digit) in WORDS {
        if lowered == *word {
            return (*digit).to_string();
        }
    }
    let trimmed = lowered.trim_end_matches(".0").to_string();
    trimmed
}

const PHRASE_STOPWORDS: &[&str] = &[
    "What",
    "Which",
    "How",
    "Who",
    "When",
    "Where",
    "Why",
    "The",
    "A",
    "An",
    "True",
    "False",
    "If",
    "Is",
    "Are",
    "During",
    "While",
    "In",
    "On",
    "Regarding",
    "Describe",
    "Answer",
];

/// First `max` maximal runs of capitalized words in `text`, skipping common
/// sentence-leading words.
pub(crate) fn capitalized_phrases(text: &str, max: usize) -> Vec<String> {
    let mut phrases = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let flush = |current: &mut Vec<&str>, phrases: &mut Vec<String>| {
        if !current.is_empty() {
            phrases.push(current.join(" "));
            current.clear();
        }
    };
    for token in text.split_whitespace() {
        let word = token.trim_matches(|c: char| !c.is_alphanumeric());
        let keep = !word.is_empty()
            && word.chars().next().is_some_and(|c| c.is_uppercase())
            && !PHRASE_STOPWORDS.contains(&word);
        if keep {
            current.push(word);
        } else {
            flush(&mut current, &mut phrases);
        }
    }
    flush(&mut current, &mut phrases);
    phrases.truncate(max);
    phrases
}

fn extract_section_json(prompt: &str, prefix: &str) -> Option<serde_json::Value> {
    let tail = prompt.split(prefix).nth(1)?;
    super::payload::extract_json_payload(tail).ok()
}
