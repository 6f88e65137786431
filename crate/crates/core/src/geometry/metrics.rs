use nalgebra::{Matrix3, Vector3};

use super::pose::orthonormality_error;
use super::{GeometryError, RigidPose};

/// Angle of the relative rotation `Ra^T Rb`, in degrees.
pub fn rotation_geodesic_deg(ra: &Matrix3<f64>, rb: &Matrix3<f64>) -> Result<f64, GeometryError> {
    for r in [ra, rb] {
        let dev = orthonormality_error(r);
        if dev > 1e-6 {
            return Err(GeometryError::NotOrthonormal(dev));
        }
    }
    let c = (((ra.transpose() * rb).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    Ok(c.acos().to_degrees())
}

pub fn translation_error_m(ta: &Vector3<f64>, tb: &Vector3<f64>) -> f64 {
    (ta - tb).norm()
}

/// Pose of frame `a` expressed in frame `b` (`x_b = T * x_a`), from two
/// world-from-camera poses.
pub fn relative_pose(world_from_a: &RigidPose, world_from_b: &RigidPose) -> RigidPose {
    world_from_b.inverse().compose(world_from_a)
}
