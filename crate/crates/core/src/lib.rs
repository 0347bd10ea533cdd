//! Synthetic text dataset generation engine.
//!
//! `synthgen` grows a new dataset out of a small seed dataset, a free-text
//! description, and optional generation constraints. An LLM provider does the
//! writing; this crate does everything around it: few-shot example selection,
//! prompt assembly, self-reflection/enhancement of generated items, code-based
//! label verification for math data, retrieval-backed fact validation,
//! difficulty enhancement, embedding-distance deduplication, and a metrics
//! suite (self-BLEU, remote-clique, APS, INGF, entity overlap) for
//! characterizing the result. Every provider call is logged to a run manifest
//! with token counts and cost.
//!
//! The crate is fully usable offline: a deterministic mock chat provider and
//! mock embedder make every pipeline stage a pure function of the seed data,
//! the configuration seed, and the prompt fixtures.

pub mod bench;
pub mod data;
pub mod engine;
pub mod gateway;
pub mod metrics;
mod par;
pub mod postprocess;
pub mod quality;
pub mod selector;
pub mod validator;
pub mod verifier;

pub use data::{
    load_dataset, save_dataset, AnswerFormat, Choice, ConstraintSet, DatasetDescriptor,
    DatasetItem, GenerationConfig, RateCard, RunConfig, RunManifest,
};
pub use engine::{run_pipeline, EngineError, PipelineRun};
pub use gateway::{Gateway, MockChatProvider, MockEmbedder, TemplateSet};
