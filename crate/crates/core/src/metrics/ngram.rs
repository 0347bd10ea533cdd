//! Inter-sample n-gram frequency (INGF): for each item, how many of its
//! distinct n-grams (n ∈ 2..=4 by default) also occur in at least one other
//! item, summed and divided by the item count.

use std::collections::{HashMap, HashSet};
use std::ops::RangeInclusive;

use super::bleu::tokenize;
use super::MetricsError;

fn distinct_ngrams(tokens: &[String], orders: RangeInclusive<usize>) -> HashSet<Vec<String>> {
    let mut grams = HashSet::new();
    for n in orders {
        if tokens.len() >= n {
            for window in tokens.windows(n) {
                grams.insert(window.to_vec());
            }
        }
    }
    grams
}

pub fn ingf(texts: &[String], orders: RangeInclusive<usize>) -> Result<f64, MetricsError> {
    if texts.len() < 2 {
        return Err(MetricsError::NotEnoughItems {
            needed: 2,
            got: texts.len(),
        });
    }
    let per_item: Vec<HashSet<Vec<String>>> = texts
        .iter()
        .map(|t| distinct_ngrams(&tokenize(t), orders.clone()))
        .collect();

    let mut containing_items: HashMap<&Vec<String>, u64> = HashMap::new();
    for grams in &per_item {
        for gram in grams {
            *containing_items.entry(gram).or_insert(0) += 1;
        }
    }

    let shared_total: u64 = per_item
        .iter()
        .map(|grams| grams.iter().filter(|g| containing_items[*g] >= 2).count() as u64)
        .sum();
    Ok(shared_total as f64 / texts.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disjoint_items_have_zero_ingf() {
        let texts = vec![
            "alpha beta gamma delta".to_string(),
            "one two three four".to_string(),
        ];
        assert_eq!(ingf(&texts, 2..=4).unwrap(), 0.0);
    }

    #[test]
    fn identical_items_share_every_ngram() {
        let texts = vec!["a b c d e".to_string(); 3];
        // Each item has 4 bigrams + 3 trigrams + 2 four-grams = 9 distinct
        // n-grams, all shared.
        assert_eq!(ingf(&texts, 2..=4).unwrap(), 9.0);
    }

    #[test]
    fn partial_overlap_counts_per_item() {
        let texts = vec!["the red fox".to_string(), "the red hen".to_string()];
        // Shared: bigram "the red" only → one per item, 2/2 items = 1.
        assert_eq!(ingf(&texts, 2..=4).unwrap(), 1.0);
    }

    #[test]
    fn permutation_invariant() {
        let mut texts = vec![
            "the quick brown fox jumps".to_string(),
            "the quick red fox sleeps".to_string(),
            "a slow brown dog wanders".to_string(),
        ];
        let a = ingf(&texts, 2..=4).unwrap();
        texts.reverse();
        assert_eq!(a, ingf(&texts, 2..=4).unwrap());
    }
}
