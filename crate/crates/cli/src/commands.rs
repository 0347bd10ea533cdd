//! Subcommand bodies. Each one loads inputs, calls one library operation, and
//! writes the outputs; no pipeline logic lives here.

use std::io::{BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use synthgen_core::bench::{check_compliance, evaluate_model, EvalSummary};
use synthgen_core::data::{
    load_dataset, save_dataset, CallLedger, DatasetDescriptor, DatasetItem, GenerationConfig,
    ProviderKind, RateCard, RunConfig, RunManifest,
};
use synthgen_core::engine::{improve_with_feedback, run_pipeline, EngineError, PipelineRun};
use synthgen_core::gateway::{
    EmbeddingStore, Gateway, HttpProvider, MockChatProvider, MockEmbedder, TemplateSet,
};
use synthgen_core::metrics::{entity_overlap, DiversityReport};
use synthgen_core::postprocess::{
    build_similarity_matrix, choose_policy, enhance_difficulty, group_check, DifficultyPolicy,
    PolicyChoice,
};
use synthgen_core::validator::{validate_dataset, LiveCorpus, LocalCorpus, ReferenceCorpus};
use synthgen_core::verifier::verify_dataset;
use synthgen_core::AnswerFormat;

pub struct Context {
    pub config: Option<RunConfig>,
    pub out: Option<PathBuf>,
    pub offline: bool,
    pub seed: Option<u64>,
}

impl Context {
    pub fn new(
        config_path: Option<PathBuf>,
        overrides: Vec<String>,
        out: Option<PathBuf>,
        offline: bool,
        seed: Option<u64>,
    ) -> anyhow::Result<Self> {
        let mut config = config_path
            .map(|path| {
                RunConfig::load(&path).with_context(|| format!("loading {}", path.display()))
            })
            .transpose()?;
        if let Some(config) = config.as_mut() {
            for entry in &overrides {
                let (key, value) = entry
                    .split_once('=')
                    .with_context(|| format!("--set {entry}: expected KEY=VALUE"))?;
                config.apply_override(key, value)?;
            }
            if let Some(seed) = seed {
                config.generation.seed = seed;
            }
            if offline {
                config.provider.kind = ProviderKind::Mock;
            }
            config.validate()?;
        } else if !overrides.is_empty() {
            bail!("--set requires --config");
        }
        Ok(Self {
            config,
            out,
            offline,
            seed,
        })
    }

    fn require_config(&self) -> anyhow::Result<&RunConfig> {
        self.config
            .as_ref()
            .context("this subcommand requires --config")
    }

    /// Minimal config for dataset-level subcommands run without one.
    fn config_or_adhoc(&self) -> RunConfig {
        self.config.clone().unwrap_or_else(|| {
            let mut generation = GenerationConfig::new("mock-model", 1, 1);
            generation.seed = self.seed.unwrap_or(0);
            RunConfig::new(generation, "ad hoc dataset operations", "unused.json")
        })
    }

    fn out_dir(&self, default: &Path) -> PathBuf {
        self.out.clone().unwrap_or_else(|| default.to_path_buf())
    }
}

fn build_gateway(ctx: &Context, config: &RunConfig) -> anyhow::Result<Gateway> {
    let templates = match &config.templates_dir {
        Some(dir) => TemplateSet::from_dir(dir)?,
        None => TemplateSet::builtin(),
    };
    let rates = match &config.rate_card {
        Some(path) => RateCard::load(path)?,
        None => RateCard::default(),
    };
    let offline = ctx.offline || config.provider.kind == ProviderKind::Mock;
    let (chat, embedder): (
        Box<dyn synthgen_core::gateway::ChatProvider>,
        Box<dyn synthgen_core::gateway::EmbeddingProvider>,
    ) = if offline {
        (
            Box::new(MockChatProvider::new(config.generation.seed)),
            Box::new(MockEmbedder::default()),
        )
    } else {
        let provider = &config.provider;
        (
            Box::new(HttpProvider::from_env(
                provider.base_url.clone(),
                &provider.api_key_env,
                provider.context_window,
            )?),
            Box::new(HttpProvider::from_env(
                provider.base_url.clone(),
                &provider.api_key_env,
                provider.context_window,
            )?),
        )
    };
    let mut store = EmbeddingStore::new(embedder);
    if let Some(dir) = &config.embedding_cache {
        store = store.with_disk_cache(dir.clone());
    }
    Ok(Gateway::new(
        chat,
        store,
        templates,
        rates,
        config.generation.max_worker,
    ))
}

fn load_items(path: &Path) -> anyhow::Result<(Vec<DatasetItem>, DatasetDescriptor)> {
    let loaded = load_dataset(path).with_context(|| format!("loading {}", path.display()))?;
    Ok((loaded.items, loaded.descriptor))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut out = serde_json::to_string_pretty(value)?;
    out.push('\n');
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn sibling_with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let ext = path.extension().map(|e| e.to_string_lossy().into_owned());
    let name = match ext {
        Some(ext) => format!("{stem}{suffix}.{ext}"),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}

fn write_run_dir(dir: &Path, config: &RunConfig, run: &PipelineRun) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("config.json"), config)?;
    save_dataset(&run.items, dir.join("dataset.json"))?;
    if let Some(challenge) = &run.challenge_items {
        save_dataset(challenge, dir.join("dataset-cha.json"))?;
    }
    run.manifest.save(dir.join("manifest.json"))?;
    write_json(
        &dir.join("reports").join("summary.json"),
        &serde_json::json!({
            "run_id": run.manifest.run_id,
            "items": run.items.len(),
            "iterations_run": run.manifest.iterations_run,
            "cost": run.manifest.cost,
            "counters": run.manifest.counters,
            "epoch_histogram": run.manifest.epoch_histogram,
        }),
    )?;
    let mut log = String::new();
    log.push_str(&format!("run {}\n", run.manifest.run_id));
    log.push_str(&format!(
        "generation: {} iterations, {} items\n",
        run.manifest.iterations_run,
        run.items.len()
    ));
    for (counter, value) in &run.manifest.counters {
        log.push_str(&format!("{counter}: {value}\n"));
    }
    std::fs::create_dir_all(dir.join("logs"))?;
    std::fs::write(dir.join("logs").join("stages.log"), log)?;
    Ok(())
}

pub fn generate(ctx: &Context) -> anyhow::Result<()> {
    let config = ctx.require_config()?.clone();
    let loaded = load_dataset(&config.seed_dataset)
        .with_context(|| format!("loading {}", config.seed_dataset.display()))?;
    let mut descriptor = loaded.descriptor.clone();
    descriptor.description = config.dataset_description.clone();
    if !config.dataset_name.is_empty() {
        descriptor.name = config.dataset_name.clone();
    }
    let constraints = synthgen_core::ConstraintSet::new(config.dataset_constraint.clone());
    let gateway = build_gateway(ctx, &config)?;

    match run_pipeline(&gateway, &config, &loaded.items, &descriptor, &constraints) {
        Ok(run) => {
            let dir = ctx.out_dir(&PathBuf::from("runs").join(&run.manifest.run_id));
            write_run_dir(&dir, &config, &run)?;
            println!(
                "run {} complete: {} items -> {}",
                run.manifest.run_id,
                run.items.len(),
                dir.display()
            );
            Ok(())
        }
        Err(EngineError::Partial {
            produced,
            needed,
            artifacts,
        }) => {
            let dir = ctx.out_dir(&PathBuf::from("runs").join(&artifacts.manifest.run_id));
            write_run_dir(&dir, &config, &artifacts)?;
            eprintln!(
                "partial result: {produced} of {needed} items; artifacts kept in {}",
                dir.display()
            );
            Err(EngineError::Partial {
                produced,
                needed,
                artifacts,
            }
            .into())
        }
        Err(e) => Err(e.into()),
    }
}

pub fn enhance(
    ctx: &Context,
    dataset: &Path,
    policy: Option<DifficultyPolicy>,
) -> anyhow::Result<()> {
    let config = ctx.config_or_adhoc();
    let (items, _) = load_items(dataset)?;
    let gateway = build_gateway(ctx, &config)?;
    let policy_choice = match policy.or(config.difficulty_policy) {
        Some(p) => PolicyChoice::Fixed(p),
        None => PolicyChoice::UniformRandom,
    };

    let mut ledger = CallLedger::new();
    let mut enhanced = Vec::with_capacity(items.len());
    let mut violations = 0usize;
    for (index, item) in items.iter().enumerate() {
        match choose_policy(policy_choice, item, config.generation.seed, index) {
            Some(policy) => {
                let (out, violation) = enhance_difficulty(
                    &gateway,
                    &config.generation.model,
                    item,
                    policy,
                    &mut ledger,
                )?;
                if violation.is_some() {
                    violations += 1;
                }
                enhanced.push(out);
            }
            None => enhanced.push(item.clone()),
        }
    }

    let target = ctx
        .out
        .as_ref()
        .map(|dir| dir.join(sibling_with_suffix(dataset, "-cha").file_name().unwrap()))
        .unwrap_or_else(|| sibling_with_suffix(dataset, "-cha"));
    save_dataset(&enhanced, &target)?;
    println!(
        "enhanced {} items ({} guard rejections) -> {}",
        enhanced.len(),
        violations,
        target.display()
    );
    Ok(())
}

pub fn verify(ctx: &Context, dataset: &Path) -> anyhow::Result<()> {
    let config = ctx.config_or_adhoc();
    let (mut items, descriptor) = load_items(dataset)?;
    if descriptor.answer_format != AnswerFormat::Numeric {
        println!(
            "dataset answer format is {}; code verification applies to numeric datasets only",
            descriptor.answer_format.as_str()
        );
        return Ok(());
    }
    let gateway = build_gateway(ctx, &config)?;
    let mut ledger = CallLedger::new();
    let stats = verify_dataset(
        &gateway,
        &config.generation.model,
        &mut items,
        &config.sandbox,
        config.generation.max_worker,
        &mut ledger,
    )?;
    let target = ctx
        .out
        .as_ref()
        .map(|d| d.join(dataset.file_name().unwrap()))
        .unwrap_or_else(|| sibling_with_suffix(dataset, "-verified"));
    save_dataset(&items, &target)?;
    println!(
        "verified {} / corrected {} / review {} / skipped {} -> {}",
        stats.verified,
        stats.corrected_ids.len(),
        stats.review_needed,
        stats.skipped,
        target.display()
    );
    Ok(())
}

pub fn validate(ctx: &Context, dataset: &Path) -> anyhow::Result<()> {
    let config = ctx.config_or_adhoc();
    let (mut items, _) = load_items(dataset)?;
    let gateway = build_gateway(ctx, &config)?;
    let corpus: Box<dyn ReferenceCorpus> = match &config.wiki_corpus {
        Some(dir) => Box::new(LocalCorpus::new(dir.clone())),
        None if ctx.offline => bail!("--offline validation requires wiki_corpus in the config"),
        None => Box::new(LiveCorpus::new(config.wiki_base_url.clone(), 2.0)),
    };
    let mut ledger = CallLedger::new();
    let total = items.len();
    let stats = validate_dataset(
        &gateway,
        &config.generation.model,
        &mut items,
        corpus.as_ref(),
        synthgen_core::validator::DEFAULT_EVIDENCE_BUDGET,
        config.generation.max_worker,
        &mut ledger,
    )?;
    let target = ctx
        .out
        .as_ref()
        .map(|d| d.join(dataset.file_name().unwrap()))
        .unwrap_or_else(|| sibling_with_suffix(dataset, "-validated"));
    save_dataset(&items, &target)?;
    println!(
        "confirmed {} / corrected {} ({:.2}%) / unverifiable {} / skipped {} -> {}",
        stats.confirmed,
        stats.corrected_ids.len(),
        100.0 * stats.corrected_fraction(total),
        stats.unverifiable,
        stats.skipped,
        target.display()
    );
    Ok(())
}

pub fn dedupe(ctx: &Context, dataset: &Path, theta: Option<f64>) -> anyhow::Result<()> {
    let config = ctx.config_or_adhoc();
    let (items, _) = load_items(dataset)?;
    if items.len() < 2 {
        println!("fewer than two items; nothing to deduplicate");
        return Ok(());
    }
    let gateway = build_gateway(ctx, &config)?;
    let mut ledger = CallLedger::new();
    let embeddings = gateway.embed_items_logged(
        "dedupe",
        &config.generation.embedding_model,
        &items,
        &mut ledger,
    )?;
    let matrix = build_similarity_matrix(&embeddings)?;
    let theta = theta
        .or(config.generation.dedupe_theta)
        .or_else(|| matrix.distance_percentile(1.0))
        .context("could not derive a threshold")?;
    let (survivors, report) = group_check(&items, &matrix, theta, config.generation.seed)?;
    let target = ctx
        .out
        .as_ref()
        .map(|d| d.join(dataset.file_name().unwrap()))
        .unwrap_or_else(|| sibling_with_suffix(dataset, "-deduped"));
    save_dataset(&survivors, &target)?;
    println!(
        "theta {:.6}: removed {} of {} -> {}",
        report.theta,
        report.removed.len(),
        items.len(),
        target.display()
    );
    Ok(())
}

pub fn metrics(ctx: &Context, dataset: &Path, original: Option<&Path>) -> anyhow::Result<()> {
    let config = ctx.config_or_adhoc();
    let (items, _) = load_items(dataset)?;
    let gateway = build_gateway(ctx, &config)?;
    let mut ledger = CallLedger::new();
    let embeddings = gateway.embed_items_logged(
        "metrics",
        &config.generation.embedding_model,
        &items,
        &mut ledger,
    )?;
    let generated = DiversityReport::compute(&items, &embeddings)?;

    let mut payload = serde_json::json!({ "generated": generated });
    if let Some(original_path) = original {
        let (orig_items, _) = load_items(original_path)?;
        let orig_embeddings = gateway.embed_items_logged(
            "metrics-original",
            &config.generation.embedding_model,
            &orig_items,
            &mut ledger,
        )?;
        let original_report = DiversityReport::compute(&orig_items, &orig_embeddings)?;
        let overlap = entity_overlap(&orig_items, &items);

        let delta = |orig: f64, gen: f64| {
            if orig == 0.0 {
                "n/a".to_string()
            } else {
                format!("{:+.2}%", 100.0 * (gen - orig) / orig)
            }
        };
        println!(
            "{:<16} {:>10} {:>10} {:>9}",
            "metric", "original", "generated", "delta"
        );
        for (name, orig, gen) in [
            (
                "remote_clique",
                original_report.remote_clique,
                generated.remote_clique,
            ),
            (
                "self_bleu_mean",
                original_report.self_bleu.mean,
                generated.self_bleu.mean,
            ),
            ("aps", original_report.aps, generated.aps),
            ("ingf", original_report.ingf, generated.ingf),
        ] {
            println!(
                "{name:<16} {orig:>10.4} {gen:>10.4} {:>9}",
                delta(orig, gen)
            );
        }
        println!(
            "{:<16} {:>10} {:>10.4}",
            "entity_overlap", "-", overlap.rate
        );
        payload["original"] = serde_json::to_value(&original_report)?;
        payload["entity_overlap"] = serde_json::to_value(&overlap)?;
    } else {
        println!("items:          {}", generated.item_count);
        println!("remote_clique:  {:.6}", generated.remote_clique);
        println!("self_bleu mean: {:.6}", generated.self_bleu.mean);
        println!("aps:            {:.6}", generated.aps);
        println!("ingf:           {:.6}", generated.ingf);
    }

    let target = ctx
        .out
        .as_ref()
        .map(|d| d.join("diversity.json"))
        .unwrap_or_else(|| sibling_with_suffix(dataset, "-diversity"));
    write_json(&target, &payload)?;
    // Raw vectors for external plotting or inspection.
    let dump_target = ctx
        .out
        .as_ref()
        .map(|d| d.join("embeddings.json"))
        .unwrap_or_else(|| sibling_with_suffix(dataset, "-embeddings"));
    write_json(&dump_target, &embeddings)?;
    println!("report -> {}", target.display());
    println!("embeddings -> {}", dump_target.display());
    Ok(())
}

fn print_accuracy_row(label: &str, ori: Option<&EvalSummary>, gen: &EvalSummary) {
    match ori {
        Some(ori) => println!(
            "{label:<24} {:>8.3} {:>8.3} {:>8.3}",
            ori.accuracy,
            gen.accuracy,
            ori.accuracy - gen.accuracy
        ),
        None => println!("{label:<24} {:>8} {:>8.3} {:>8}", "-", gen.accuracy, "-"),
    }
}

pub fn bench(
    ctx: &Context,
    dataset: &Path,
    original: Option<&Path>,
    candidate: &str,
    judge: &str,
    constraint: Option<&str>,
) -> anyhow::Result<()> {
    let config = ctx.config_or_adhoc();
    let (items, descriptor) = load_items(dataset)?;
    let gateway = build_gateway(ctx, &config)?;
    let mut ledger = CallLedger::new();

    if let Some(constraint) = constraint {
        let pair = check_compliance(
            &gateway,
            &items,
            constraint,
            judge,
            config.generation.max_worker,
            &mut ledger,
        )?;
        println!(
            "judge compliance: {}/{} = {:.2}%",
            pair.judge.yes,
            pair.judge.checked,
            100.0 * pair.judge.rate()
        );
        match &pair.local {
            Some(local) => println!(
                "local compliance: {}/{} = {:.2}%",
                local.yes,
                local.checked,
                100.0 * local.rate()
            ),
            None => println!("local compliance: not a mechanical constraint"),
        }
        if let Some(dir) = &ctx.out {
            write_json(&dir.join("compliance.json"), &pair)?;
        }
        return Ok(());
    }

    let (verdicts, summary) = evaluate_model(
        &gateway,
        &items,
        &descriptor,
        candidate,
        judge,
        config.generation.max_worker,
        &mut ledger,
    )?;
    let original_summary = match original {
        Some(path) => {
            let (orig_items, orig_descriptor) = load_items(path)?;
            let (orig_verdicts, orig_summary) = evaluate_model(
                &gateway,
                &orig_items,
                &orig_descriptor,
                candidate,
                judge,
                config.generation.max_worker,
                &mut ledger,
            )?;
            if let Some(dir) = &ctx.out {
                write_jsonl(&dir.join("verdicts-ori.jsonl"), &orig_verdicts)?;
            }
            Some(orig_summary)
        }
        None => None,
    };

    println!("{:<24} {:>8} {:>8} {:>8}", "model", "ori.", "gen.", "diff.");
    print_accuracy_row(candidate, original_summary.as_ref(), &summary);
    println!(
        "scored {} / unscored {} of {}",
        summary.scored,
        summary.unscored,
        items.len()
    );
    if let Some(dir) = &ctx.out {
        write_jsonl(&dir.join("verdicts-gen.jsonl"), &verdicts)?;
        write_json(
            &dir.join("bench.json"),
            &serde_json::json!({
                "candidate": candidate,
                "judge": judge,
                "generated": summary,
                "original": original_summary,
            }),
        )?;
    }
    Ok(())
}

fn write_jsonl(path: &Path, rows: &[impl serde::Serialize]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn feedback(ctx: &Context, run_dir: &Path) -> anyhow::Result<()> {
    if !std::io::stdin().is_terminal() {
        bail!("feedback mode is interactive; stdin is not a terminal");
    }
    let config = ctx.config_or_adhoc();
    let dataset_path = run_dir.join("dataset.json");
    let (mut items, _) = load_items(&dataset_path)?;
    let gateway = build_gateway(ctx, &config)?;
    let progress_path = run_dir.join("feedback_progress.json");
    let mut done: Vec<String> = std::fs::read_to_string(&progress_path)
        .ok()
        .and_then(|raw| serde_json::from_str(&raw).ok())
        .unwrap_or_default();

    let stdin = std::io::stdin();
    let mut ledger = CallLedger::new();
    println!("feedback mode: empty line accepts, `q` quits (progress is saved)");
    for index in 0..items.len() {
        if done.contains(&items[index].id) {
            continue;
        }
        println!("\n[{}] {}", items[index].id, items[index].prompt_json());
        print!("feedback> ");
        std::io::stdout().flush()?;
        let mut line = String::new();
        stdin.lock().read_line(&mut line)?;
        let line = line.trim();
        if line == "q" {
            break;
        }
        if !line.is_empty() {
            let improved = improve_with_feedback(
                &gateway,
                &config.generation.model,
                &items[index],
                line,
                &mut ledger,
            )?;
            items[index] = improved;
        }
        done.push(items[index].id.clone());
        save_dataset(&items, &dataset_path)?;
        write_json(&progress_path, &done)?;
    }
    println!("revised dataset saved to {}", dataset_path.display());
    Ok(())
}

pub fn report(ctx: &Context, run_dir: &Path) -> anyhow::Result<()> {
    let manifest = RunManifest::load(run_dir.join("manifest.json"))?;
    let item_count = load_items(&run_dir.join("dataset.json"))
        .map(|(items, _)| items.len())
        .unwrap_or(0);

    println!("run {}", manifest.run_id);
    println!("iterations: {}", manifest.iterations_run);
    println!(
        "tokens: {} prompt / {} completion",
        manifest.total_prompt_tokens, manifest.total_completion_tokens
    );
    println!("cost:");
    println!("  base       ${:.6}", manifest.cost.base);
    println!("  +code      ${:.6}", manifest.cost.code);
    println!("  +RAG       ${:.6}", manifest.cost.rag);
    println!("  total      ${:.6}", manifest.cost.total);
    if item_count > 0 {
        println!(
            "  per item   ${:.6}",
            manifest.cost.total / item_count as f64
        );
    }

    if manifest.epoch_histogram.is_empty() {
        println!("quality loop: disabled");
    } else {
        println!("quality epochs:");
        for (epochs, count) in &manifest.epoch_histogram {
            println!("  {epochs} epochs: {count} items");
        }
    }

    match &manifest.dedupe {
        Some(report) => println!(
            "dedupe: theta {:.6}, removed {}, survivors {}",
            report.theta,
            report.removed.len(),
            report.survivors
        ),
        None => println!("dedupe: disabled"),
    }

    let correction = |key: &str, label: &str| match manifest.counters.get(key) {
        Some(count) if item_count > 0 => println!(
            "{label}: {count} corrected ({:.2}%)",
            100.0 * *count as f64 / item_count as f64
        ),
        Some(count) => println!("{label}: {count} corrected"),
        None => println!("{label}: disabled"),
    };
    correction("code_corrected", "code verification");
    correction("rag_corrected", "RAG validation");

    let payload = serde_json::json!({
        "run_id": manifest.run_id,
        "items": item_count,
        "iterations_run": manifest.iterations_run,
        "tokens": {
            "prompt": manifest.total_prompt_tokens,
            "completion": manifest.total_completion_tokens,
        },
        "cost": manifest.cost,
        "per_item_cost": if item_count > 0 { Some(manifest.cost.total / item_count as f64) } else { None },
        "epoch_histogram": manifest.epoch_histogram,
        "dedupe": manifest.dedupe,
        "counters": manifest.counters,
        "corrections": manifest.corrections,
    });
    let target = ctx
        .out
        .as_ref()
        .map(|d| d.join("report.json"))
        .unwrap_or_else(|| run_dir.join("report.json"));
    write_json(&target, &payload)?;
    println!("report -> {}", target.display());
    Ok(())
}
