//! Self-BLEU: per-item corpus BLEU against the rest of the dataset.
//!
//! Definition used throughout (fixed so numbers are stable):
//! - tokens: lowercase, split on unicode whitespace, every non-alphanumeric
//!   character removed from each token, empty tokens dropped;
//! - modified n-gram precision up to `max_n` with reference-count clipping;
//! - uniform weights over the orders the candidate actually has n-grams for;
//! - add-one smoothing when an order has zero matches: `p_n = 1/(d_n + 1)`;
//! - brevity penalty from the reference length closest to the candidate
//!   (ties broken toward the shorter reference).

use std::collections::HashMap;

use super::MetricsError;

/// Tokenize one text for BLEU and n-gram statistics.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|token| {
            token
                .chars()
                .filter(|c| c.is_alphanumeric())
                .collect::<String>()
        })
        .filter(|token| !token.is_empty())
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU of `candidate` against `references`.
pub fn bleu(candidate: &[String], references: &[&[String]], max_n: usize) -> f64 {
    let c = candidate.len();
    if c == 0 || references.is_empty() {
        return 0.0;
    }

    let mut log_sum = 0.0;
    let mut orders_used = 0usize;
    for n in 1..=max_n {
        let cand_counts = ngram_counts(candidate, n);
        let d: u64 = cand_counts.values().sum();
        if d == 0 {
            continue;
        }
        let mut matches = 0u64;
        for (gram, &count) in &cand_counts {
            let best_ref = references
                .iter()
                .map(|r| ngram_counts(r, n).get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            matches += count.min(best_ref);
        }
        let p = if matches == 0 {
            1.0 / (d as f64 + 1.0)
        } else {
            matches as f64 / d as f64
        };
        log_sum += p.ln();
        orders_used += 1;
    }
    if orders_used == 0 {
        return 0.0;
    }
    let geo_mean = (log_sum / orders_used as f64).exp();

    // Closest reference length, ties toward the shorter reference.
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap_or(0);
    let bp = if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    bp * geo_mean
}

/// Per-item self-BLEU scores and their mean. Needs at least two items.
pub fn self_bleu(texts: &[String], max_n: usize) -> Result<(Vec<f64>, f64), MetricsError> {
    if texts.len() < 2 {
        return Err(MetricsError::NotEnoughItems {
            needed: 2,
            got: texts.len(),
        });
    }
    let token_lists: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
    let scores: Vec<f64> = (0..token_lists.len())
        .map(|i| {
            let references: Vec<&[String]> = token_lists
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, tokens)| tokens.as_slice())
                .collect();
            bleu(&token_lists[i], &references, max_n)
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok((scores, mean))
}
