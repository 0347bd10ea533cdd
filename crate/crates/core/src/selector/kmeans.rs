//! Lloyd's k-means with k-means++ seeding, used for diversity-maximizing
//! few-shot selection.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A fitted clustering: assignment per point plus the objective trace.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after each Lloyd iteration. Non-increasing.
    pub objective_trace: Vec<f64>,
}

impl KMeansFit {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::INFINITY)
    }

    /// Point indices per cluster, in input order.
    pub fn clusters(&self, k: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); k];
        for (point, &cluster) in self.assignments.iter().enumerate() {
            out[cluster].push(point);
        }
        out
    }
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())].clone());
    let mut min_sq: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = min_sq.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let threshold = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = points.len() - 1;
            for (i, &d) in min_sq.iter().enumerate() {
                acc += d;
                if acc >= threshold {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        let centroid = points[next].clone();
        for (i, p) in points.iter().enumerate() {
            let d = squared_distance(p, &centroid);
            if d < min_sq[i] {
                min_sq[i] = d;
            }
        }
        centroids.push(centroid);
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut assignments = Vec::with_capacity(points.len());
    let mut sse = 0.0;
    for p in points {
        let (best, best_d) = centroids
            .iter()
            .enumerate()
            .map(|(j, c)| (j, squared_distance(p, c)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("k >= 1");
        assignments.push(best);
        sse += best_d;
    }
    (assignments, sse)
}

/// One Lloyd run from a k-means++ start. Empty clusters are re-seeded from the
/// point farthest from its centroid, so exactly `k` clusters survive.
fn lloyd(points: &[Vec<f64>], k: usize, max_iters: usize, rng: &mut ChaCha8Rng) -> KMeansFit {
    let mut centroids = kmeans_pp_init(points, k, rng);
    let (mut assignments, mut sse) = assign(points, &centroids);
    let mut trace = vec![sse];
    for _ in 0..max_iters {
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // Re-seed from the farthest point so the cluster survives.
                let farthest = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, squared_distance(p, &centroids[assignments[i]])))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                centroids[j] = points[farthest].clone();
            } else {
                for (c, s) in centroids[j].iter_mut().zip(&sums[j]) {
                    *c = s / counts[j] as f64;
                }
            }
        }
        let (next_assignments, next_sse) = assign(points, &centroids);
        let converged = next_assignments == assignments;
        assignments = next_assignments;
        sse = next_sse;
        trace.push(sse);
        if converged {
            break;
        }
    }
    KMeansFit {
        assignments,
        centroids,
        objective_trace: trace,
    }
}

/// Fit k-means, keeping the best of `restarts` runs by final objective.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    max_iters: usize,
    restarts: usize,
    rng: &mut ChaCha8Rng,
) -> KMeansFit {
    assert!(k >= 1 && k <= points.len(), "k must be in 1..=n");
    let mut best: Option<KMeansFit> = None;
    for _ in 0..restarts.max(1) {
        let fit = lloyd(points, k, max_iters, rng);
        let better = best
            .as_ref()
            .is_none_or(|b| fit.objective() < b.objective());
        if better {
            best = Some(fit);
        }
    }
    best.expect("at least one restart")
}
