use nalgebra::{Point2, Vector3};

use super::{CameraIntrinsics, GeometryError};
use crate::extraction::{InterestPointSet, ResponseStack};
use crate::scalar::Scalar;

pub const DEFAULT_MIN_DISPARITY: f64 = 0.5;

/// Point in the left camera frame from a rectified correspondence.
pub fn triangulate_rectified(
    x_left: f64,
    x_right: f64,
    y: f64,
    k: &CameraIntrinsics,
    baseline: f64,
) -> Result<Vector3<f64>, GeometryError> {
    triangulate_rectified_with(x_left, x_right, y, k, baseline, DEFAULT_MIN_DISPARITY)
}

pub fn triangulate_rectified_with(
    x_left: f64,
    x_right: f64,
    y: f64,
    k: &CameraIntrinsics,
    baseline: f64,
    min_disparity: f64,
) -> Result<Vector3<f64>, GeometryError> {
    let d = x_left - x_right;
    if !(d > min_disparity) {
        return Err(GeometryError::Disparity(d));
    }
    let z = k.fx * baseline / d;
    Ok(k.unproject(&Point2::new(x_left, y), z))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoMatchConfig {
    /// Largest disparity searched, in pixels.
    pub d_max: usize,
    /// Minimum right-image response for a match to be accepted.
    pub response_floor: f64,
    pub min_disparity: f64,
}

impl Default for StereoMatchConfig {
    fn default() -> Self {
        Self { d_max: 128, response_floor: 0.2, min_disparity: DEFAULT_MIN_DISPARITY }
    }
}

/// Lifts every left interest point by finding the same channel's maximum
/// along its row in the right response map, within `[x - d_max, x)`.
pub fn stereo_match_by_channel<T: Scalar>(
    left: &InterestPointSet,
    right: &ResponseStack<T>,
    k: &CameraIntrinsics,
    baseline: f64,
    config: &StereoMatchConfig,
) -> Vec<Option<Vector3<f64>>> {
    left.points
        .iter()
        .map(|p| {
            let (x, y) = (p.x as usize, p.y as usize);
            if p.channel >= right.channels() || y >= right.height() || config.d_max == 0 {
                return None;
            }
            let hi = x.min(right.width());
            let lo = x.saturating_sub(config.d_max);
            let mut best: Option<(usize, f64)> = None;
            for c in lo..hi {
                let v = right.get(y, c, p.channel).as_f64();
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((c, v));
                }
            }
            let (c, v) = best?;
            if v < config.response_floor {
                return None;
            }
            triangulate_rectified_with(x as f64, c as f64, y as f64, k, baseline, config.min_disparity).ok()
        })
        .collect()
}
