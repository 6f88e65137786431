//! Camera models, stereo lifting, P3P + RANSAC pose estimation and pose
//! error metrics.

mod camera;
mod metrics;
mod p3p;
mod pose;
mod ransac;
mod stereo;

pub use camera::{CameraIntrinsics, StereoCalibration};
pub use metrics::{relative_pose, rotation_geodesic_deg, translation_error_m};
pub use p3p::{p3p_solve, real_polynomial_roots};
pub use pose::RigidPose;
pub use ransac::{ransac_p3p, PnPResult, RansacConfig};
pub use stereo::{
    stereo_match_by_channel, triangulate_rectified, triangulate_rectified_with, StereoMatchConfig,
    DEFAULT_MIN_DISPARITY,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (|R^T R - I| = {0:e})")]
    NotOrthonormal(f64),
    #[error("disparity {0} is below the minimum")]
    Disparity(f64),
    #[error("the three world points are collinear")]
    CollinearPoints,
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },
    #[error("{points} world points but {pixels} pixels")]
    LengthMismatch { points: usize, pixels: usize },
    #[error("invalid camera intrinsics: {0}")]
    Intrinsics(String),
    #[error("malformed calibration: {0}")]
    Parse(String),
}
