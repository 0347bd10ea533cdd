//! Pairwise embedding statistics: remote-clique (mean cosine distance) and
//! average pairwise similarity (APS).
//!
//! Both fold their pair terms with compensated summation so that
//! `remote_clique == 1 − aps` holds to within 1e-12 even on large corpora.

use crate::gateway::EmbeddingMatrix;

use super::MetricsError;

/// Kahan-compensated sum.
pub(crate) fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut compensation = 0.0;
    for value in values {
        let y = value - compensation;
        let t = sum + y;
        compensation = (t - sum) - y;
        sum = t;
    }
    sum
}

fn cosine_similarity(a: &[f64], b: &[f64], pair: (usize, usize)) -> Result<f64, MetricsError> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(MetricsError::ZeroVector {
            first: pair.0,
            second: pair.1,
        });
    }
    Ok(dot / (na * nb))
}

fn pairwise_similarities(matrix: &EmbeddingMatrix) -> Result<Vec<f64>, MetricsError> {
    let n = matrix.len();
    if n < 2 {
        return Err(MetricsError::NotEnoughItems { needed: 2, got: n });
    }
    let mut sims = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            sims.push(cosine_similarity(matrix.row(i), matrix.row(j), (i, j))?);
        }
    }
    Ok(sims)
}

/// Mean cosine distance (1 − similarity) over all unordered pairs.
pub fn remote_clique(matrix: &EmbeddingMatrix) -> Result<f64, MetricsError> {
    let sims = pairwise_similarities(matrix)?;
    let count = sims.len() as f64;
    Ok(kahan_sum(sims.into_iter().map(|s| 1.0 - s)) / count)
}

/// Mean cosine similarity over all unordered pairs.
pub fn aps(matrix: &EmbeddingMatrix) -> Result<f64, MetricsError> {
    let sims = pairwise_similarities(matrix)?;
    let count = sims.len() as f64;
    Ok(kahan_sum(sims.into_iter()) / count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: Vec<Vec<f64>>) -> EmbeddingMatrix {
        let ids = (0..rows.len()).map(|i| format!("id-{i}")).collect();
        EmbeddingMatrix::new("m", ids, rows).unwrap()
    }

    #[test]
    fn identical_embeddings_have_zero_distance() {
        let m = matrix(vec![vec![0.3, 0.4]; 4]);
        assert!(remote_clique(&m).unwrap().abs() < 1e-12);
        assert!((aps(&m).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_unit_vectors_are_distance_one() {
        let m = matrix(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!((remote_clique(&m).unwrap() - 1.0).abs() < 1e-12);
        assert!(aps(&m).unwrap().abs() < 1e-12);
    }

    #[test]
    fn zero_vector_is_an_undefined_pair() {
        let m = matrix(vec![vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(
            remote_clique(&m),
            Err(MetricsError::ZeroVector { .. })
        ));
    }

    #[test]
    fn matches_brute_force_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..8).map(|_| rng.random::<f64>() - 0.2).collect())
            .collect();
        let m = matrix(rows.clone());

        // Independent double loop with naive accumulation.
        let mut total = 0.0;
        let mut pairs = 0.0;
        for i in 0..rows.len() {
            for j in (i + 1)..rows.len() {
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(x, y)| x * y).sum();
                let na = rows[i].iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = rows[j].iter().map(|x| x * x).sum::<f64>().sqrt();
                total += 1.0 - dot / (na * nb);
                pairs += 1.0;
            }
        }
        let oracle = total / pairs;
        assert!((remote_clique(&m).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn remote_clique_is_one_minus_aps() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for n in [2usize, 10, 50] {
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..16).map(|_| rng.random::<f64>() - 0.5).collect())
                .collect();
            let m = matrix(rows);
            let rc = remote_clique(&m).unwrap();
            let s = aps(&m).unwrap();
            assert!(
                (rc - (1.0 - s)).abs() < 1e-12,
                "n={n}: rc={rc}, 1-aps={}",
                1.0 - s
            );
        }
    }

    #[test]
    fn permutation_invariant() {
        let rows = vec![
            vec![1.0, 2.0, 3.0],
            vec![-1.0, 0.5, 2.0],
            vec![0.3, 0.3, 0.3],
            vec![2.0, -1.0, 0.0],
        ];
        let m1 = matrix(rows.clone());
        let mut reversed = rows;
        reversed.reverse();
        let m2 = matrix(reversed);
        assert!((remote_clique(&m1).unwrap() - remote_clique(&m2).unwrap()).abs() < 1e-12);
    }
}
