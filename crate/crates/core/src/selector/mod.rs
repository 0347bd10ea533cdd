//! Few-shot exemplar selection: uniform random sampling or
//! diversity-maximizing cluster sampling over item embeddings.

pub mod kmeans;

pub use kmeans::{kmeans, KMeansFit};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::DatasetItem;
use crate::gateway::EmbeddingMatrix;

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("requested {requested} exemplars from {available} items")]
    NotEnoughItems { requested: usize, available: usize },
    #[error("embeddings cover {embeddings} items, dataset has {items}")]
    Misaligned { embeddings: usize, items: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    Random,
    ClusterDiverse,
}

/// Selection parameters. The clustering knobs only matter for
/// `ClusterDiverse`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SelectorConfig {
    pub strategy: SelectionStrategy,
    pub n: usize,
    pub seed: u64,
    pub kmeans_max_iters: usize,
    pub kmeans_restarts: usize,
}

impl SelectorConfig {
    pub fn new(strategy: SelectionStrategy, n: usize, seed: u64) -> Self {
        Self {
            strategy,
            n,
            seed,
            kmeans_max_iters: 100,
            kmeans_restarts: 4,
        }
    }
}

/// Draw `n` distinct indices uniformly without replacement (partial
/// Fisher-Yates), deterministic per seed.
fn sample_indices(count: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..count).collect();
    for i in 0..n {
        let j = rng.random_range(i..count);
        pool.swap(i, j);
    }
    pool.truncate(n);
    pool
}

/// Uniform random selection of `n` items without replacement.
pub fn select_random(
    items: &[DatasetItem],
    n: usize,
    seed: u64,
) -> Result<Vec<DatasetItem>, SelectorError> {
    if n > items.len() {
        return Err(SelectorError::NotEnoughItems {
            requested: n,
            available: items.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_indices(items.len(), n, &mut rng)
        .into_iter()
        .map(|i| items[i].clone())
        .collect())
}

/// A clustering of the seed dataset, computed once per run. Representatives
/// are redrawn per iteration with `draw`.
#[derive(Debug, Clone)]
pub struct FittedClusters {
    clusters: Vec<Vec<usize>>,
    /// Indices available for topping up when clustering came up short.
    fallback_pool: Vec<usize>,
    pub fallback_used: bool,
}

impl FittedClusters {
    /// Cluster items into `n` groups over their embeddings. When fewer than
    /// `n` distinct embeddings exist, clustering covers the distinct ones and
    /// the deficit falls back to random selection.
    pub fn fit(
        items: &[DatasetItem],
        embeddings: &EmbeddingMatrix,
        config: &SelectorConfig,
    ) -> Result<Self, SelectorError> {
        let n = config.n;
        if n > items.len() {
            return Err(SelectorError::NotEnoughItems {
                requested: n,
                available: items.len(),
            });
        }
        if embeddings.len() != items.len() {
            return Err(SelectorError::Misaligned {
                embeddings: embeddings.len(),
                items: items.len(),
            });
        }

        let mut distinct: Vec<usize> = Vec::new();
        for i in 0..items.len() {
            if !distinct
                .iter()
                .any(|&j| embeddings.row(i) == embeddings.row(j))
            {
                distinct.push(i);
            }
        }

        if distinct.len() < n {
            log::warn!(
                "only {} distinct embeddings for {} clusters; falling back to random for the deficit",
                distinct.len(),
                n
            );
            let clusters = distinct.iter().map(|&i| vec![i]).collect();
            return Ok(Self {
                clusters,
                fallback_pool: (0..items.len()).collect(),
                fallback_used: true,
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let points: Vec<Vec<f64>> = (0..items.len())
            .map(|i| embeddings.row(i).to_vec())
            .collect();
        let fit = kmeans(
            &points,
            n,
            config.kmeans_max_iters,
            config.kmeans_restarts,
            &mut rng,
        );
        let clusters: Vec<Vec<usize>> = fit
            .clusters(n)
            .into_iter()
            .filter(|c| !c.is_empty())
            .collect();
        Ok(Self {
            clusters,
            fallback_pool: (0..items.len()).collect(),
            fallback_used: false,
        })
    }

    /// Draw one exemplar uniformly from each cluster; top up from the fallback
    /// pool when clustering could not provide `n` groups. No duplicates.
    pub fn draw(&self, items: &[DatasetItem], n: usize, seed: u64) -> Vec<DatasetItem> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen: Vec<usize> = self
            .clusters
            .iter()
            .map(|members| members[rng.random_range(0..members.len())])
            .collect();
        let mut have: std::collections::BTreeSet<usize> = chosen.iter().copied().collect();
        while chosen.len() < n {
            let candidate = self.fallback_pool[rng.random_range(0..self.fallback_pool.len())];
            if have.insert(candidate) {
                chosen.push(candidate);
            }
        }
        chosen.truncate(n);
        chosen.into_iter().map(|i| items[i].clone()).collect()
    }
}

/// One-shot diverse selection: fit clusters, then draw representatives.
pub fn select_diverse(
    items: &[DatasetItem],
    embeddings: &EmbeddingMatrix,
    config: &SelectorConfig,
) -> Result<Vec<DatasetItem>, SelectorError> {
    let fitted = FittedClusters::fit(items, embeddings, config)?;
    Ok(fitted.draw(items, config.n, config.seed.wrapping_add(1)))
}
