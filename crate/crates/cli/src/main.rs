//! `synthgen` — dataset generation, validation, and measurement from the
//! command line. Every subcommand is a thin wrapper over one library
//! operation.
//!
//! Exit codes: 0 success, 1 config/environment error, 2 partial result
//! (artifacts kept), 3 provider failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use synthgen_core::engine::EngineError;
use synthgen_core::gateway::GatewayError;
use synthgen_core::postprocess::DifficultyPolicy;

#[derive(Parser)]
#[command(
    name = "synthgen",
    version,
    about = "Synthetic dataset generation engine"
)]
struct Cli {
    /// Run configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set generation_number=100. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (default: ./runs/<run-id> for generate, cwd otherwise).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Force the deterministic mock provider, mock embedder, and local corpus.
    #[arg(long, global = true)]
    offline: bool,
    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full generation pipeline from a config file.
    Generate,
    /// Difficulty-enhance a dataset; writes a `-cha` twin alongside it.
    Enhance {
        #[arg(long)]
        dataset: PathBuf,
        /// Fixed policy (paraphrase_question, add_context, paraphrase_choices,
        /// add_choice); omit for uniform random over applicable policies.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Verify labels of a numeric dataset by executing LLM-written solvers.
    Verify {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Fact-check a dataset against a reference corpus.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Remove near-duplicate items by embedding distance.
    Dedupe {
        #[arg(long)]
        dataset: PathBuf,
        /// Distance threshold; omit to use the 1st percentile of distances.
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Diversity report (and original-vs-generated comparison).
    Metrics {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        original: Option<PathBuf>,
    },
    /// Evaluate a candidate model on a dataset with an LLM judge.
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        original: Option<PathBuf>,
        #[arg(long)]
        candidate: String,
        #[arg(long)]
        judge: String,
        /// Audit compliance with this constraint instead of accuracy.
        #[arg(long)]
        constraint: Option<String>,
    },
    /// Interactively improve items in a finished run directory.
    Feedback {
        #[arg(long = "run-dir")]
        run_dir: PathBuf,
    },
    /// Consolidated report for a finished run directory.
    Report {
        #[arg(long = "run-dir")]
        run_dir: PathBuf,
    },
}

fn parse_policy(name: &str) -> anyhow::Result<DifficultyPolicy> {
    Ok(match name {
        "paraphrase_question" => DifficultyPolicy::ParaphraseQuestion,
        "add_context" => DifficultyPolicy::AddContext,
        "paraphrase_choices" => DifficultyPolicy::ParaphraseChoices,
        "add_choice" => DifficultyPolicy::AddChoice,
        other => anyhow::bail!("unknown policy {other}"),
    })
}

fn exit_code_for(error: &anyhow::Error) -> u8 {
    for cause in error.chain() {
        if let Some(engine) = cause.downcast_ref::<EngineError>() {
            return match engine {
                EngineError::Partial { .. } => 2,
                EngineError::Gateway(g) => gateway_code(g),
                _ => 1,
            };
        }
        if let Some(gateway) = cause.downcast_ref::<GatewayError>() {
            return gateway_code(gateway);
        }
    }
    1
}

fn gateway_code(error: &GatewayError) -> u8 {
    match error {
        GatewayError::Transport(_) | GatewayError::Refusal(_) | GatewayError::TokenLimit { .. } => {
            3
        }
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = match commands::Context::new(
        cli.config.clone(),
        cli.overrides.clone(),
        cli.out.clone(),
        cli.offline,
        cli.seed,
    ) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };

    let result = match cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Enhance { dataset, policy } => {
            let policy = match policy.as_deref().map(parse_policy).transpose() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(1);
                }
            };
            commands::enhance(&ctx, &dataset, policy)
        }
        Command::Verify { dataset } => commands::verify(&ctx, &dataset),
        Command::Validate { dataset } => commands::validate(&ctx, &dataset),
        Command::Dedupe { dataset, theta } => commands::dedupe(&ctx, &dataset, theta),
        Command::Metrics { dataset, original } => {
            commands::metrics(&ctx, &dataset, original.as_deref())
        }
        Command::Bench {
            dataset,
            original,
            candidate,
            judge,
            constraint,
        } => commands::bench(
            &ctx,
            &dataset,
            original.as_deref(),
            &candidate,
            &judge,
            constraint.as_deref(),
        ),
        Command::Feedback { run_dir } => commands::feedback(&ctx, &run_dir),
        Command::Report { run_dir } => commands::report(&ctx, &run_dir),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
