//! Pairwise Euclidean distance matrix and threshold-based deduplication
//! (group checking).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{DatasetItem, DedupeRemoval, DedupeReport};
use crate::gateway::EmbeddingMatrix;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("matrix is for {matrix} items, got {items}")]
    Misaligned { matrix: usize, items: usize },
    #[error("need at least one embedding")]
    Empty,
}

/// Symmetric matrix of pairwise Euclidean distances, indexed by item id.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub ids: Vec<String>,
    n: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// All off-diagonal distances, one per unordered pair.
    pub fn pair_distances(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * (self.n - 1) / 2);
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                out.push(self.distance(i, j));
            }
        }
        out
    }

    /// The `q`-th percentile (0..=100) of the pair distances, by the
    /// nearest-rank method on the ascending sort.
    pub fn distance_percentile(&self, q: f64) -> Option<f64> {
        let mut distances = self.pair_distances();
        if distances.is_empty() {
            return None;
        }
        distances.sort_by(f64::total_cmp);
        let rank = ((q / 100.0) * distances.len() as f64).ceil() as usize;
        Some(distances[rank.saturating_sub(1).min(distances.len() - 1)])
    }
}

/// Exact pairwise Euclidean distances over embedding rows.
pub fn build_similarity_matrix(
    embeddings: &EmbeddingMatrix,
) -> Result<SimilarityMatrix, SimilarityError> {
    let n = embeddings.len();
    if n == 0 {
        return Err(SimilarityError::Empty);
    }
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = embeddings
                .row(i)
                .iter()
                .zip(embeddings.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    Ok(SimilarityMatrix {
        ids: embeddings.ids.clone(),
        n,
        data,
    })
}

/// Remove one item of every pair closer than `theta`.
///
/// Offending pairs are processed most-similar first; within a pair the victim
/// is chosen by seeded coin flip. One pass suffices: each offending pair loses
/// at least one member, so no surviving pair can be closer than `theta`.
/// Survivors keep their input order.
pub fn group_check(
    items: &[DatasetItem],
    matrix: &SimilarityMatrix,
    theta: f64,
    seed: u64,
) -> Result<(Vec<DatasetItem>, DedupeReport), SimilarityError> {
    if matrix.len() != items.len() {
        return Err(SimilarityError::Misaligned {
            matrix: matrix.len(),
            items: items.len(),
        });
    }
    let n = items.len();
    let mut offending: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if matrix.distance(i, j) < theta {
                offending.push((i, j));
            }
        }
    }
    offending.sort_by(|a, b| {
        matrix
            .distance(a.0, a.1)
            .total_cmp(&matrix.distance(b.0, b.1))
            .then(a.cmp(b))
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alive = vec![true; n];
    let mut removed = Vec::new();
    for (i, j) in offending {
        if alive[i] && alive[j] {
            let (victim, kept) = if rng.random::<bool>() { (i, j) } else { (j, i) };
            alive[victim] = false;
            removed.push(DedupeRemoval {
                removed_id: items[victim].id.clone(),
                kept_id: items[kept].id.clone(),
                distance: matrix.distance(i, j),
            });
        }
    }

    let survivors: Vec<DatasetItem> = items
        .iter()
        .zip(&alive)
        .filter(|(_, &a)| a)
        .map(|(item, _)| item.clone())
        .collect();
    let report = DedupeReport {
        theta,
        removed,
        survivors: survivors.len(),
    };
    Ok((survivors, report))
}
