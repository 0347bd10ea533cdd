//! Self-reflection and self-enhancement: judge each generated item against
//! the dataset description, rewrite flagged ones, and repeat up to an epoch
//! cap. Items are enhanced in place, never dropped.

use serde::{Deserialize, Serialize};

use crate::data::{CallLedger, DatasetDescriptor, DatasetItem, Stage};
use crate::gateway::{extract_json_payload, ChatRequest, Gateway, GatewayError, Message};
use crate::par::parallel_map;

/// One reflection verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reflection {
    pub item_id: String,
    pub isgood: bool,
    pub reflection: String,
    pub epoch: u32,
}

/// Judge one item. An unusable reply is conservatively treated as a rejection
/// with a synthetic reflection, so the item gets another enhancement chance
/// rather than silently passing.
pub fn reflect(
    gateway: &Gateway,
    model: &str,
    item: &DatasetItem,
    descriptor: &DatasetDescriptor,
    epoch: u32,
    ledger: &mut CallLedger,
) -> Result<Reflection, GatewayError> {
    let prompt = gateway.templates().render(
        "self_reflection",
        &[
            ("description", descriptor.description.as_str()),
            ("example", item.prompt_json().as_str()),
        ],
    )?;
    let request = ChatRequest::new(model, vec![Message::user(prompt)]);
    let completion = gateway.chat_logged(Stage::QualityReflect, &item.id, &request, ledger)?;

    let parsed = extract_json_payload(&completion.text)
        .ok()
        .and_then(|payload| {
            let isgood = payload.get("isgood")?.as_str()?.trim().to_ascii_lowercase();
            let isgood = match isgood.as_str() {
                "yes" => true,
                "no" => false,
                _ => return None,
            };
            let reflection = payload
                .get("reflection")
                .and_then(|r| r.as_str())
                .unwrap_or_default()
                .to_string();
            Some((isgood, reflection))
        });

    let (isgood, reflection) = match parsed {
        Some((true, text)) => (true, text),
        Some((false, text)) if !text.trim().is_empty() => (false, text),
        Some((false, _)) => (false, "no reason given".to_string()),
        None => (false, "unparseable judgment".to_string()),
    };
    Ok(Reflection {
        item_id: item.id.clone(),
        isgood,
        reflection,
        epoch,
    })
}

/// Rewrite a flagged item using its reflection. The improved version must keep
/// the original's structural shape (same fields, same choice count); otherwise
/// the original is kept.
pub fn enhance(
    gateway: &Gateway,
    model: &str,
    item: &DatasetItem,
    descriptor: &DatasetDescriptor,
    reflection: &Reflection,
    ledger: &mut CallLedger,
) -> Result<DatasetItem, GatewayError> {
    debug_assert!(!reflection.isgood);
    let prompt = gateway.templates().render(
        "self_enhancement",
        &[
            ("description", descriptor.description.as_str()),
            ("reflection", reflection.reflection.as_str()),
            ("original example", item.prompt_json().as_str()),
        ],
    )?;
    let request = ChatRequest::new(model, vec![Message::user(prompt)]);
    let completion = gateway.chat_logged(Stage::QualityEnhance, &item.id, &request, ledger)?;

    let improved = extract_json_payload(&completion.text)
        .ok()
        .and_then(|payload| {
            let record = crate::gateway::payload_records(payload)
                .into_iter()
                .next()?;
            crate::gateway::item_from_record(&item.id, &record).ok()
        });
    let Some(mut improved) = improved else {
        log::warn!(
            "item {}: enhancement reply unusable; keeping original",
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
            "item {}: enhancement changed shape; keeping original",
            item.id
        );
        return Ok(item.clone());
    }
    improved.meta = item.meta.clone();
    improved
        .meta
        .insert("enhanced_epoch".into(), reflection.epoch.to_string());
    Ok(improved)
}

/// Result of a quality pass over a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityStats {
    /// Enhancement epochs used per item, aligned with the corpus.
    pub epochs: Vec<u32>,
    /// Items still flagged bad when the epoch cap was hit.
    pub exhausted_ids: Vec<String>,
}

impl QualityStats {
    /// Epoch histogram: epochs used → item count.
    pub fn histogram(&self) -> std::collections::BTreeMap<u32, u64> {
        let mut hist = std::collections::BTreeMap::new();
        for &e in &self.epochs {
            *hist.entry(e).or_insert(0) += 1;
        }
        hist
    }
}

/// Run reflect→enhance per item until the judge approves or `max_epochs` is
/// reached. Item count never changes; items failing at the cap are kept and
/// flagged `quality_exhausted`.
pub fn quality_pass(
    gateway: &Gateway,
    model: &str,
    items: &mut [DatasetItem],
    descriptor: &DatasetDescriptor,
    max_epochs: u32,
    max_worker: usize,
    ledger: &mut CallLedger,
) -> Result<QualityStats, GatewayError> {
    let snapshot: Vec<DatasetItem> = items.to_vec();
    let results = parallel_map(&snapshot, max_worker, |_, item| {
        let mut local = CallLedger::new();
        let outcome = quality_one(
            gateway,
            model,
            item.clone(),
            descriptor,
            max_epochs,
            &mut local,
        );
        (outcome, local)
    });

    let mut stats = QualityStats::default();
    for ((result, local), slot) in results.into_iter().zip(items.iter_mut()) {
        ledger.extend(local);
        let (item, epochs, exhausted) = result?;
        if exhausted {
            stats.exhausted_ids.push(item.id.clone());
        }
        stats.epochs.push(epochs);
        *slot = item;
    }
    Ok(stats)
}

fn quality_one(
    gateway: &Gateway,
    model: &str,
    mut item: DatasetItem,
    descriptor: &DatasetDescriptor,
    max_epochs: u32,
    ledger: &mut CallLedger,
) -> Result<(DatasetItem, u32, bool), GatewayError> {
    let mut epochs_used = 0;
    for epoch in 1..=max_epochs {
        let verdict = reflect(gateway, model, &item, descriptor, epoch, ledger)?;
        if verdict.isgood {
            item.record_stage("quality");
            return Ok((item, epochs_used, false));
        }
        item = enhance(gateway, model, &item, descriptor, &verdict, ledger)?;
        epochs_used = epoch;
    }
    // One final verdict decides whether the last rewrite passed.
    let verdict = reflect(gateway, model, &item, descriptor, max_epochs + 1, ledger)?;
    item.record_stage("quality");
    if verdict.isgood {
        Ok((item, epochs_used, false))
    } else {
        item.meta.insert("quality_exhausted".into(), "true".into());
        Ok((item, epochs_used, true))
    }
}
