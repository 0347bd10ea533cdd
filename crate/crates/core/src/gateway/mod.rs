//! Uniform interface to chat-completion and embedding providers: template
//! rendering, retries, logging, caching, and the deterministic mocks.

pub mod embedding;
pub mod mock;
pub mod payload;
pub mod provider;
pub mod template;

pub use embedding::{EmbeddingMatrix, EmbeddingStore};
pub use mock::{MockChatProvider, MockEmbedder, MockRule};
pub use payload::{extract_json_payload, item_from_record, payload_records};
pub use provider::{
    estimate_tokens, ChatProvider, ChatRequest, Completion, EmbeddingProvider, GatewayError,
    HttpProvider, Message, TokenUsage,
};
pub use template::{PromptTemplate, TemplateError, TemplateSet};

use std::sync::Arc;

use crate::data::{CallLedger, RateCard, Stage};

pub(crate) use mock::sha256_hex;

/// Everything a pipeline stage needs to talk to a provider: the chat provider,
/// the cached embedder, the template set, and pricing. Shareable across
/// workers; per-call records go into caller-owned ledgers so concurrent runs
/// serialize deterministically.
pub struct Gateway {
    chat: Box<dyn ChatProvider>,
    embeddings: EmbeddingStore,
    templates: TemplateSet,
    rates: RateCard,
    semaphore: Arc<CallPermits>,
}

impl Gateway {
    pub fn new(
        chat: Box<dyn ChatProvider>,
        embeddings: EmbeddingStore,
        templates: TemplateSet,
        rates: RateCard,
        max_concurrent: usize,
    ) -> Self {
        Self {
            chat,
            embeddings,
            templates,
            rates,
            semaphore: Arc::new(CallPermits::new(max_concurrent.max(1))),
        }
    }

    /// Offline gateway: deterministic mock chat + mock embedder, builtin
    /// templates, empty rate card.
    pub fn offline(seed: u64) -> Self {
        Self::new(
            Box::new(MockChatProvider::new(seed)),
            EmbeddingStore::new(Box::new(MockEmbedder::default())),
            TemplateSet::builtin(),
            RateCard::default(),
            2,
        )
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn rates(&self) -> &RateCard {
        &self.rates
    }

    /// Send a chat request and record it in `ledger` under `stage`/`scope`.
    pub fn chat_logged(
        &self,
        stage: Stage,
        scope: &str,
        request: &ChatRequest,
        ledger: &mut CallLedger,
    ) -> Result<Completion, GatewayError> {
        let _permit = self.semaphore.acquire();
        let prompt = request.flattened();
        let completion = self.chat.chat(request)?;
        ledger.record(
            stage,
            scope,
            sha256_hex(&prompt),
            completion.usage.prompt_tokens,
            completion.usage.completion_tokens,
            completion.latency_ms,
            self.rates.cost(
                &request.model,
                completion.usage.prompt_tokens,
                completion.usage.completion_tokens,
            ),
        );
        Ok(completion)
    }

    /// Embed `texts` and record one per-batch call under `stage`/`scope`.
    /// Token usage is estimated from the text that actually reached the
    /// provider (cache hits cost nothing).
    pub fn embed_logged(
        &self,
        stage: Stage,
        scope: &str,
        model: &str,
        texts: &[String],
        ledger: &mut CallLedger,
    ) -> Result<Vec<Vec<f64>>, GatewayError> {
        let _permit = self.semaphore.acquire();
        let rows = self.embeddings.embed(model, texts)?;
        let tokens: usize = texts.iter().map(|t| estimate_tokens(t)).sum();
        ledger.record(
            stage,
            scope,
            sha256_hex(&texts.join("\u{1}")),
            tokens as u64,
            0,
            0,
            self.rates.cost(model, tokens as u64, 0),
        );
        Ok(rows)
    }

    pub fn embed_items_logged(
        &self,
        scope: &str,
        model: &str,
        items: &[crate::data::DatasetItem],
        ledger: &mut CallLedger,
    ) -> Result<EmbeddingMatrix, GatewayError> {
        let texts: Vec<String> = items.iter().map(|i| i.text.clone()).collect();
        let ids: Vec<String> = items.iter().map(|i| i.id.clone()).collect();
        let rows = self.embed_logged(Stage::Embedding, scope, model, &texts, ledger)?;
        EmbeddingMatrix::new(model, ids, rows)
    }
}

/// Counting semaphore bounding concurrent provider calls to `max_worker`.
struct CallPermits {
    state: std::sync::Mutex<usize>,
    available: std::sync::Condvar,
}

struct Permit<'a>(&'a CallPermits);

impl CallPermits {
    fn new(permits: usize) -> Self {
        Self {
            state: std::sync::Mutex::new(permits),
            available: std::sync::Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut count = self.state.lock().expect("permit lock poisoned");
        while *count == 0 {
            count = self.available.wait(count).expect("permit lock poisoned");
        }
        *count -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut count = self.0.state.lock().expect("permit lock poisoned");
        *count += 1;
        self.0.available.notify_one();
    }
}
