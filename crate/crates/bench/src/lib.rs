//! Shared fixtures for the criterion benchmarks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use synthgen_core::gateway::EmbeddingMatrix;
use synthgen_core::DatasetItem;

/// Seeded random embedding matrix of `n` rows × `dim`.
pub fn random_embeddings(n: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random::<f64>() - 0.5).collect())
        .collect();
    let ids = (0..n).map(|i| format!("it-{i}")).collect();
    EmbeddingMatrix::new("bench", ids, rows).expect("well-formed matrix")
}

/// Seeded corpus of items with overlapping vocabulary, for text metrics.
pub fn random_items(n: usize, seed: u64) -> Vec<DatasetItem> {
    const WORDS: &[&str] = &[
        "river",
        "mountain",
        "harvest",
        "orchestra",
        "satellite",
        "market",
        "fossil",
        "harbor",
        "describes",
        "measures",
        "compares",
        "records",
        "ancient",
        "pattern",
        "scale",
        "route",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.random_range(8..16);
            let words: Vec<&str> = (0..len)
                .map(|_| WORDS[rng.random_range(0..WORDS.len())])
                .collect();
            DatasetItem::new(format!("it-{i}"), words.join(" "))
        })
        .collect()
}
