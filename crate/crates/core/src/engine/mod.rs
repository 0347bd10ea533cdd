//! The pipeline driver: per-iteration few-shot prompting, batch accumulation,
//! and the downstream stage sequence (quality loop, code verification,
//! retrieval validation, difficulty enhancement, group checking).

mod attributes;
mod prompt;

pub use attributes::{extract_attributes, AttributePool, AttributeSource};
pub use prompt::{assemble_prompt, PromptBundle};

use thiserror::Error;

use crate::data::{
    CallLedger, ConstraintSet, DataError, DatasetDescriptor, DatasetItem, RunConfig, RunManifest,
    SharedManifest, Stage,
};
use crate::gateway::{
    extract_json_payload, item_from_record, payload_records, sha256_hex, ChatRequest, Gateway,
    GatewayError, Message,
};
use crate::par::parallel_map;
use crate::postprocess::{
    build_similarity_matrix, choose_policy, enhance_difficulty, group_check, PolicyChoice,
};
use crate::selector::{
    select_random, FittedClusters, SelectionStrategy, SelectorConfig, SelectorError,
};
use crate::validator::{LiveCorpus, LocalCorpus, ReferenceCorpus};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    Similarity(#[from] crate::postprocess::SimilarityError),
    #[error("iteration budget exhausted: produced {produced} of {needed} items")]
    Partial {
        produced: usize,
        needed: usize,
        /// Everything generated before the budget ran out, with the manifest.
        artifacts: Box<PipelineRun>,
    },
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub items: Vec<DatasetItem>,
    /// Difficulty-enhanced twin of `items`, present when that stage ran.
    pub challenge_items: Option<Vec<DatasetItem>>,
    pub manifest: RunManifest,
}

/// One generation iteration's parsed result.
#[derive(Debug, Clone)]
pub struct GenerationOutcome {
    pub iteration: usize,
    pub requested: usize,
    pub items: Vec<DatasetItem>,
    pub format_errors: u64,
    pub completion_sha256: String,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

fn iteration_seed(run_seed: u64, iteration: usize) -> u64 {
    splitmix64(run_seed ^ splitmix64(iteration as u64 + 1))
}

/// Send one assembled prompt and map the reply onto dataset items. Invalid
/// records are dropped and counted as format errors; a reply with no JSON at
/// all is an outcome with zero items, not an error.
pub fn generate_batch(
    gateway: &Gateway,
    config: &RunConfig,
    descriptor: &DatasetDescriptor,
    bundle: &PromptBundle,
    iteration: usize,
    ledger: &mut CallLedger,
) -> Result<GenerationOutcome, GatewayError> {
    let mut request = ChatRequest::new(
        config.generation.model.clone(),
        vec![
            Message::system(bundle.system.clone()),
            Message::user(bundle.user.clone()),
        ],
    );
    request.temperature = config.generation.temperature;
    request.max_tokens = config.generation.max_tokens;
    let scope = format!("iter-{iteration}");
    let completion = gateway.chat_logged(Stage::Generation, &scope, &request, ledger)?;
    let completion_sha256 = sha256_hex(&completion.text);

    let mut outcome = GenerationOutcome {
        iteration,
        requested: bundle.batch_size,
        items: Vec::new(),
        format_errors: 0,
        completion_sha256,
    };
    let payload = match extract_json_payload(&completion.text) {
        Ok(value) => value,
        Err(_) => {
            outcome.format_errors += 1;
            return Ok(outcome);
        }
    };
    for (slot, record) in payload_records(payload).into_iter().enumerate() {
        if outcome.items.len() >= bundle.batch_size {
            break;
        }
        let id = format!("gen-{iteration}-{slot}");
        match item_from_record(&id, &record) {
            Ok(item) if descriptor.item_conforms(&item) => outcome.items.push(item),
            Ok(_) | Err(_) => outcome.format_errors += 1,
        }
    }
    Ok(outcome)
}

struct IterationPlan<'a> {
    iteration: usize,
    few_shot: Vec<DatasetItem>,
    attribute: Option<&'a str>,
}

/// Run the whole pipeline: iterate generation until the target count is
/// reached (or 3× the planned iteration count is exhausted), then apply the
/// configured downstream stages. Deterministic for a fixed seed and mock
/// providers, regardless of worker count.
pub fn run_pipeline(
    gateway: &Gateway,
    config: &RunConfig,
    seed_items: &[DatasetItem],
    descriptor: &DatasetDescriptor,
    constraints: &ConstraintSet,
) -> Result<PipelineRun, EngineError> {
    config.validate()?;
    descriptor.validate()?;
    let generation = &config.generation;
    if generation.few_shot_num > seed_items.len() {
        return Err(SelectorError::NotEnoughItems {
            requested: generation.few_shot_num,
            available: seed_items.len(),
        }
        .into());
    }

    let run_id = format!(
        "run-{}",
        &sha256_hex(&format!(
            "{}|{}",
            serde_json::to_string(config).expect("config serializes"),
            generation.seed
        ))[..16]
    );
    let manifest = SharedManifest::new(RunManifest::new(run_id, generation.clone()));
    let mut ledger = CallLedger::new();

    // Few-shot machinery: embeddings and the cluster partition are computed
    // once per run; representatives are redrawn per iteration.
    let selector_config = SelectorConfig {
        strategy: config.few_shot_strategy,
        n: generation.few_shot_num,
        seed: generation.seed,
        kmeans_max_iters: 100,
        kmeans_restarts: 4,
    };
    let fitted = match config.few_shot_strategy {
        SelectionStrategy::ClusterDiverse => {
            let embeddings = gateway.embed_items_logged(
                "seed-corpus",
                &generation.embedding_model,
                seed_items,
                &mut ledger,
            )?;
            Some(FittedClusters::fit(
                seed_items,
                &embeddings,
                &selector_config,
            )?)
        }
        SelectionStrategy::Random => None,
    };
    let draw_few_shot = |iteration: usize| -> Result<Vec<DatasetItem>, SelectorError> {
        let seed = iteration_seed(generation.seed, iteration);
        match &fitted {
            Some(clusters) => Ok(clusters.draw(seed_items, generation.few_shot_num, seed)),
            None => select_random(seed_items, generation.few_shot_num, seed),
        }
    };

    // Attribute pool: user-supplied wins; otherwise extracted once per run.
    let attribute_pool = if !config.attributes.is_empty() {
        Some(AttributePool::user_supplied(config.attributes.clone()))
    } else if config.stages.attribute_guided {
        let examples = draw_few_shot(0)?;
        let pool = extract_attributes(
            gateway,
            &generation.model,
            descriptor,
            &examples,
            &mut ledger,
        )?;
        if pool.attributes.is_empty() {
            log::warn!("attribute extraction produced nothing; running unguided");
            None
        } else {
            Some(pool)
        }
    } else {
        None
    };

    // Generation waves. Iteration indices advance monotonically; each wave
    // runs up to max_worker iterations in parallel and merges by index.
    let planned = generation.planned_iterations();
    let budget = planned * 3;
    let mut accepted: Vec<DatasetItem> = Vec::new();
    let mut label_counts: std::collections::BTreeMap<String, usize> = Default::default();
    let mut next_iteration = 0usize;
    let mut total_format_errors = 0u64;
    let mut ratio_rejected = 0u64;
    let mut iteration_log: Vec<crate::data::IterationRecord> = Vec::new();

    while accepted.len() < generation.generation_number && next_iteration < budget {
        let remaining = generation.generation_number - accepted.len();
        let wave_len = remaining
            .div_ceil(generation.batch_size)
            .min(generation.max_worker)
            .min(budget - next_iteration);
        let plans: Vec<IterationPlan> = (0..wave_len)
            .map(|offset| {
                let iteration = next_iteration + offset;
                let few_shot = draw_few_shot(iteration)?;
                let attribute = attribute_pool
                    .as_ref()
                    .map(|pool| pool.attributes[iteration % pool.attributes.len()].as_str());
                Ok(IterationPlan {
                    iteration,
                    few_shot,
                    attribute,
                })
            })
            .collect::<Result<_, SelectorError>>()?;

        let wave: Vec<(Result<GenerationOutcome, GatewayError>, CallLedger)> =
            parallel_map(&plans, generation.max_worker, |_, plan| {
                let mut local = CallLedger::new();
                let outcome = assemble_prompt(
                    gateway.templates(),
                    descriptor,
                    constraints,
                    &plan.few_shot,
                    plan.attribute,
                    generation.batch_size,
                )
                .map_err(GatewayError::from)
                .and_then(|bundle| {
                    generate_batch(
                        gateway,
                        config,
                        descriptor,
                        &bundle,
                        plan.iteration,
                        &mut local,
                    )
                });
                (outcome, local)
            });

        for (plan, (outcome, local)) in plans.iter().zip(wave) {
            ledger.extend(local);
            let outcome = outcome?;
            total_format_errors += outcome.format_errors;
            let few_shot_ids: Vec<&str> = plan.few_shot.iter().map(|i| i.id.as_str()).collect();
            iteration_log.push(crate::data::IterationRecord {
                iteration: plan.iteration as u64,
                few_shot_ids: few_shot_ids.iter().map(|s| s.to_string()).collect(),
                attribute: plan.attribute.map(str::to_string),
                parsed_items: outcome.items.len() as u64,
                format_errors: outcome.format_errors,
            });
            for mut item in outcome.items {
                if accepted.len() >= generation.generation_number {
                    break;
                }
                if let Some(ratio) = &generation.label_ratio {
                    if let Some(label) = &item.label {
                        if let Some(&fraction) = ratio.get(label) {
                            let cap =
                                (fraction * generation.generation_number as f64).ceil() as usize;
                            let count = label_counts.entry(label.clone()).or_insert(0);
                            if *count >= cap {
                                ratio_rejected += 1;
                                continue;
                            }
                            *count += 1;
                        }
                    }
                }
                item.meta
                    .insert("iteration".into(), plan.iteration.to_string());
                item.meta
                    .insert("few_shot_ids".into(), few_shot_ids.join(","));
                if let Some(attribute) = plan.attribute {
                    item.meta.insert("attribute".into(), attribute.to_string());
                }
                item.record_stage("generated");
                accepted.push(item);
            }
        }
        next_iteration += wave_len;
    }

    manifest.with(|m| {
        m.iterations_run = next_iteration as u64;
        m.iterations = std::mem::take(&mut iteration_log);
        m.bump("format_errors", total_format_errors);
        if ratio_rejected > 0 {
            m.bump("label_ratio_rejected", ratio_rejected);
        }
        m.merge_ledger(std::mem::take(&mut ledger));
    });

    if accepted.len() < generation.generation_number {
        let produced = accepted.len();
        let artifacts = PipelineRun {
            items: accepted,
            challenge_items: None,
            manifest: manifest.into_inner(),
        };
        return Err(EngineError::Partial {
            produced,
            needed: generation.generation_number,
            artifacts: Box::new(artifacts),
        });
    }
    accepted.truncate(generation.generation_number);

    // Downstream stages, in pipeline order.
    let mut items = accepted;
    if config.stages.quality_loop {
        let mut stage_ledger = CallLedger::new();
        let stats = crate::quality::quality_pass(
            gateway,
            &generation.model,
            &mut items,
            descriptor,
            generation.reflection_max_epochs,
            generation.max_worker,
            &mut stage_ledger,
        )?;
        manifest.with(|m| {
            for &epochs in &stats.epochs {
                m.record_epoch(epochs);
            }
            m.bump("quality_exhausted", stats.exhausted_ids.len() as u64);
            m.merge_ledger(stage_ledger);
        });
    }

    if config.stages.code_verification
        && descriptor.answer_format == crate::data::AnswerFormat::Numeric
    {
        let mut stage_ledger = CallLedger::new();
        let stats = crate::verifier::verify_dataset(
            gateway,
            &generation.model,
            &mut items,
            &config.sandbox,
            generation.max_worker,
            &mut stage_ledger,
        )?;
        manifest.with(|m| {
            m.bump("code_verified", stats.verified);
            m.bump("code_corrected", stats.corrected_ids.len() as u64);
            m.bump("code_review_needed", stats.review_needed);
            m.bump("code_skipped", stats.skipped);
            m.corrections
                .insert("code".into(), stats.corrected_ids.clone());
            m.merge_ledger(stage_ledger);
        });
    }

    if config.stages.rag_validation {
        let corpus: Box<dyn ReferenceCorpus> = match &config.wiki_corpus {
            Some(dir) => Box::new(LocalCorpus::new(dir.clone())),
            None => Box::new(LiveCorpus::new(config.wiki_base_url.clone(), 2.0)),
        };
        let mut stage_ledger = CallLedger::new();
        let stats = crate::validator::validate_dataset(
            gateway,
            &generation.model,
            &mut items,
            corpus.as_ref(),
            crate::validator::DEFAULT_EVIDENCE_BUDGET,
            generation.max_worker,
            &mut stage_ledger,
        )?;
        manifest.with(|m| {
            m.bump("rag_confirmed", stats.confirmed);
            m.bump("rag_corrected", stats.corrected_ids.len() as u64);
            m.bump("rag_unverifiable", stats.unverifiable);
            m.bump("rag_skipped", stats.skipped);
            m.corrections
                .insert("rag".into(), stats.corrected_ids.clone());
            m.merge_ledger(stage_ledger);
        });
    }

    // Group checking before difficulty enhancement, so the challenge set
    // mirrors the deduplicated base set one-to-one.
    if config.stages.group_checking && items.len() >= 2 {
        let mut stage_ledger = CallLedger::new();
        let embeddings = gateway.embed_items_logged(
            "generated-corpus",
            &generation.embedding_model,
            &items,
            &mut stage_ledger,
        )?;
        let matrix = build_similarity_matrix(&embeddings)?;
        let theta = match generation.dedupe_theta {
            Some(theta) => theta,
            None => matrix.distance_percentile(1.0).unwrap_or(0.0),
        };
        let (survivors, report) = group_check(&items, &matrix, theta, generation.seed)?;
        items = survivors;
        manifest.with(|m| {
            m.bump("dedupe_removed", report.removed.len() as u64);
            m.dedupe = Some(report);
            m.merge_ledger(stage_ledger);
        });
    }

    let challenge_items = if config.stages.difficulty_enhancement {
        let mut stage_ledger = CallLedger::new();
        let policy_choice = match config.difficulty_policy {
            Some(policy) => PolicyChoice::Fixed(policy),
            None => PolicyChoice::UniformRandom,
        };
        let outcomes = parallel_map(&items, generation.max_worker, |index, item| {
            let mut local = CallLedger::new();
            let result = match choose_policy(policy_choice, item, generation.seed, index) {
                Some(policy) => {
                    enhance_difficulty(gateway, &generation.model, item, policy, &mut local)
                }
                None => Ok((item.clone(), None)),
            };
            (result, local)
        });
        let mut enhanced = Vec::with_capacity(items.len());
        let mut violations = 0u64;
        for (result, local) in outcomes {
            stage_ledger.extend(local);
            let (item, violation) = result?;
            if violation.is_some() {
                violations += 1;
            }
            enhanced.push(item);
        }
        manifest.with(|m| {
            m.bump("difficulty_guard_violations", violations);
            m.merge_ledger(stage_ledger);
        });
        Some(enhanced)
    } else {
        None
    };

    Ok(PipelineRun {
        items,
        challenge_items,
        manifest: manifest.into_inner(),
    })
}

/// Rewrite one item from free-text human feedback, shape-guarded like the
/// quality loop's enhancement.
pub fn improve_with_feedback(
    gateway: &Gateway,
    model: &str,
    item: &DatasetItem,
    feedback: &str,
    ledger: &mut CallLedger,
) -> Result<DatasetItem, GatewayError> {
    let prompt = gateway.templates().render(
        "human_feedback",
        &[
            ("user_feedback", feedback),
            ("example", item.prompt_json().as_str()),
        ],
    )?;
    let request = ChatRequest::new(model, vec![Message::user(prompt)]);
    let completion = gateway.chat_logged(Stage::HumanFeedback, &item.id, &request, ledger)?;
    let improved = extract_json_payload(&completion.text)
        .ok()
        .and_then(|payload| {
            let inner = payload.get("improved_example").cloned().unwrap_or(payload);
            item_from_record(&item.id, &inner).ok()
        });
    let Some(mut improved) = improved else {
        log::warn!(
            "item {}: feedback reply unusable; keeping original",
            item.id
        );
        return Ok(item.clone());
    };
    let shape_ok = improved.label.is_some() == item.label.is_some()
        && match (&item.choices, &improved.choices) {
            (Some(a), Some(b)) => a.len() == b.len(),
            (None, None) => true,
            _ => false,
        }
        && improved.validate().is_ok();
    if !shape_ok {
        log::warn!(
            "item {}: feedback rewrite changed shape; keeping original",
            item.id
        );
        return Ok(item.clone());
    }
    improved.meta = item.meta.clone();
    improved.meta.insert("human_feedback".into(), "true".into());
    Ok(improved)
}
