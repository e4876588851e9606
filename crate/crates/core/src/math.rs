//! Small SO(3) helpers on top of nalgebra.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map from a rotation vector to a rotation.
pub fn exp_so3(phi: &Vector3<f64>) -> Rotation3<f64> {
    Rotation3::from_scaled_axis(*phi)
}

/// Logarithm map: the rotation vector of `r`.
pub fn log_so3(r: &Rotation3<f64>) -> Vector3<f64> {
    // The trace-based formula loses precision (and can hit acos(>1)) near identity.
    UnitQuaternion::from_rotation_matrix(r).scaled_axis()
}

/// Projects a nearly-orthonormal matrix back onto SO(3) via the quaternion.
pub fn orthonormalize(m: &Matrix3<f64>) -> Rotation3<f64> {
    let r = Rotation3::from_matrix_unchecked(*m);
    let q = UnitQuaternion::from_rotation_matrix(&r);
    UnitQuaternion::new_normalize(*q.quaternion()).to_rotation_matrix()
}

/// Unit vector, or `None` when the norm is below `eps`.
pub fn try_unit(v: &Vector3<f64>, eps: f64) -> Option<Vector3<f64>> {
    let n = v.norm();
    (n > eps).then(|| v / n)
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Orthonormality defect ||R^T R - I||_max.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}
