use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};

use super::GeometryError;

/// Rigid transform `x_target = R * x_source + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidPose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Fails unless `|R^T R - I| < 1e-9` and `det R > 0`.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let dev = orthonormality_error(&rotation);
        if dev >= 1e-9 || rotation.determinant() <= 0.0 {
            return Err(GeometryError::NotOrthonormal(dev));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        Self { rotation: *r.matrix(), translation }
    }

    /// Quaternion in `(w, x, y, z)` order; normalized before use.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64, translation: Vector3<f64>) -> Self {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
        Self { rotation: *q.to_rotation_matrix().matrix(), translation }
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &RigidPose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

pub(crate) fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}
