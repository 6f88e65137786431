use nalgebra::{Point2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{p3p_solve, CameraIntrinsics, GeometryError, RigidPose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    /// Maximum reprojection error of an inlier, in pixels.
    pub threshold_px: f64,
    pub max_iters: usize,
    /// Confidence for the adaptive iteration bound.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { threshold_px: 3.0, max_iters: 1000, confidence: 0.99, seed: 0 }
    }
}

/// Outcome of [`ransac_p3p`]. `pose` is `None` when no minimal model
/// reached four inliers.
#[derive(Debug, Clone, PartialEq)]
pub struct PnPResult {
    pub pose: Option<RigidPose>,
    pub inlier_mask: Vec<bool>,
    pub inlier_count: usize,
    pub iterations_run: usize,
}

impl PnPResult {
    pub fn is_success(&self) -> bool {
        self.pose.is_some()
    }
}

/// Minimum inliers for a model to be accepted.
const MIN_INLIERS: usize = 4;

struct Score {
    inliers: usize,
    mean_error: f64,
}

fn score(pose: &RigidPose, points: &[Vector3<f64>], pixels: &[Point2<f64>], k: &CameraIntrinsics, thr: f64) -> (Score, Vec<bool>) {
    let mut mask = vec![false; points.len()];
    let mut inliers = 0;
    let mut sum = 0.0;
    for (i, (p, px)) in points.iter().zip(pixels).enumerate() {
        if let Some(proj) = k.project(&pose.transform(p)) {
            let e = (proj - px).norm();
            if e <= thr {
                mask[i] = true;
                inliers += 1;
                sum += e;
            }
        }
    }
    let mean_error = if inliers > 0 { sum / inliers as f64 } else { f64::INFINITY };
    (Score { inliers, mean_error }, mask)
}

/// Camera-from-world pose (`x_cam = R x_world + t`) from 3-D points and their
/// pixels, by P3P on seeded minimal samples.
///
/// Iteration `i` draws its sample from a generator keyed on `(seed, i)`, so
/// the sample sequence is fixed by the seed alone. Every P3P candidate is
/// scored; more inliers wins, ties go to the lower mean reprojection error.
/// The best minimal model is returned as is.
pub fn ransac_p3p(
    points: &[Vector3<f64>],
    pixels: &[Point2<f64>],
    k: &CameraIntrinsics,
    config: &RansacConfig,
) -> Result<PnPResult, GeometryError> {
    if points.len() != pixels.len() {
        return Err(GeometryError::LengthMismatch { points: points.len(), pixels: pixels.len() });
    }
    let n = points.len();
    if n < 4 {
        return Err(GeometryError::TooFewCorrespondences { needed: 4, got: n });
    }
    let bearings: Vec<Vector3<f64>> = pixels.iter().map(|px| k.bearing(px)).collect();
    let mut best: Option<(Score, Vec<bool>, RigidPose)> = None;
    let mut required = config.max_iters;
    let mut iter = 0;
    while iter < required.min(config.max_iters) {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(iter as u64);
        iter += 1;
        let idx = sample(&mut rng, n, 3).into_vec();
        let world = [points[idx[0]], points[idx[1]], points[idx[2]]];
        let rays = [bearings[idx[0]], bearings[idx[1]], bearings[idx[2]]];
        let Ok(candidates) = p3p_solve(&world, &rays) else {
            continue;
        };
        let mut improved = false;
        for pose in candidates {
            let (s, mask) = score(&pose, points, pixels, k, config.threshold_px);
            let better = match &best {
                None => true,
                Some((b, _, _)) => s.inliers > b.inliers || (s.inliers == b.inliers && s.mean_error < b.mean_error),
            };
            if better {
                best = Some((s, mask, pose));
                improved = true;
            }
        }
        if improved {
            let w = best.as_ref().map_or(0.0, |(s, _, _)| s.inliers as f64 / n as f64);
            required = adaptive_bound(w, config.confidence, config.max_iters);
        }
    }
    match best {
        Some((s, mask, pose)) if s.inliers >= MIN_INLIERS => Ok(PnPResult {
            pose: Some(pose),
            inlier_count: s.inliers,
            inlier_mask: mask,
            iterations_run: iter,
        }),
        _ => Ok(PnPResult { pose: None, inlier_mask: vec![false; n], inlier_count: 0, iterations_run: iter }),
    }
}

/// Iterations needed to draw one all-inlier triple with probability
/// `confidence` when a fraction `w` of the data are inliers.
fn adaptive_bound(w: f64, confidence: f64, max_iters: usize) -> usize {
    let good = w.powi(3);
    if good >= 1.0 {
        return 1;
    }
    if good <= 0.0 {
        return max_iters;
    }
    let n = (1.0 - confidence).ln() / (1.0 - good).ln();
    if n.is_finite() {
        (n.ceil() as usize).clamp(1, max_iters)
    } else {
        max_iters
    }
}
