use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CompressionError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub max_iters: usize,
    /// Stop once inertia improves by less than this fraction.
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iters: 100, rel_tol: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// `k x dim`, row-major.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid (lowest index on ties) and its squared distance.
pub(crate) fn nearest(centroids: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(centroid, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = row(rng.random_range(0..n)).to_vec();
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids[..dim])).collect();
    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &centroids[start..]));
        }
    }
    centroids
}

/// Lloyd iterations from k-means++ seeds. An emptied cluster is moved to
/// the point farthest from its current centroid.
pub fn kmeans(points: &[f64], dim: usize, k: usize, config: &KMeansConfig) -> Result<KMeansResult, CompressionError> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(CompressionError::InvalidArgument(format!("{} values do not form {dim}-d points", points.len())));
    }
    let n = points.len() / dim;
    if k == 0 {
        return Err(CompressionError::InvalidArgument("k must be positive".into()));
    }
    if n < k {
        return Err(CompressionError::TooFewPoints { n, k });
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = plus_plus_seeds(points, dim, k, &mut rng);
    let mut assignments = vec![0; n];
    let mut inertia = f64::INFINITY;
    let mut iterations = 0;
    while iterations < config.max_iters {
        iterations += 1;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (c, d) = nearest(&centroids, dim, row(i));
            assignments[i] = c;
            dists[i] = d;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignments[i];
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].partial_cmp(&dists[b]).expect("finite").then(b.cmp(&a)))
                    .expect("n >= k >= 1");
                centroids[c * dim..(c + 1) * dim].copy_from_slice(row(far));
                dists[far] = 0.0;
            }
        }
        let new_inertia: f64 = (0..n).map(|i| nearest(&centroids, dim, row(i)).1).sum();
        let improved = inertia - new_inertia;
        inertia = new_inertia;
        if improved.is_finite() && improved <= config.rel_tol * inertia.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    for i in 0..n {
        assignments[i] = nearest(&centroids, dim, row(i)).0;
    }
    Ok(KMeansResult { centroids, assignments, inertia, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = [1.0, 2.0, 3.0, 4.0, 5.0, 9.0];
        let r = kmeans(&pts, 2, 1, &KMeansConfig::default()).unwrap();
        assert!((r.centroids[0] - 3.0).abs() < 1e-12);
        assert!((r.centroids[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_points_quantize_exactly() {
        let distinct = [[0.0, 0.0], [5.0, 1.0], [-3.0, 4.0], [10.0, 10.0]];
        let pts: Vec<f64> = (0..40).flat_map(|i| distinct[i % 4]).collect();
        let r = kmeans(&pts, 2, 4, &KMeansConfig::default()).unwrap();
        assert!(r.inertia < 1e-20);
    }

    #[test]
    fn errors_and_determinism() {
        assert!(matches!(kmeans(&[1.0, 2.0], 1, 3, &KMeansConfig::default()), Err(CompressionError::TooFewPoints { n: 2, k: 3 })));
        assert!(kmeans(&[1.0, 2.0, 3.0], 2, 1, &KMeansConfig::default()).is_err());
        let pts: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64).collect();
        let cfg = KMeansConfig { seed: 9, ..KMeansConfig::default() };
        assert_eq!(kmeans(&pts, 2, 5, &cfg).unwrap(), kmeans(&pts, 2, 5, &cfg).unwrap());
    }

    #[test]
    fn nearest_breaks_ties_low() {
        let c = [0.0, 2.0];
        assert_eq!(nearest(&c, 1, &[1.0]).0, 0);
    }
}
