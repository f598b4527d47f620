//! Small SO(3) helpers shared by the camera, bundle adjustment and refinement code.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation by `omega` (axis × angle) via the exponential map.
pub fn exp_so3(omega: &Vector3<f64>) -> Rotation3<f64> {
    Rotation3::new(*omega)
}

/// Axis × angle of `r`, with the angle in [0, π]. Computed through the
/// quaternion so that small angles keep full precision.
pub fn log_so3(r: &Rotation3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_rotation_matrix(r);
    let (w, v) = if q.w < 0.0 { (-q.w, -q.imag()) } else { (q.w, q.imag()) };
    let s = v.norm();
    if s < 1e-300 {
        return Vector3::zeros();
    }
    let angle = 2.0 * s.atan2(w);
    v * (angle / s)
}

/// Geodesic distance between two rotations, in radians.
pub fn angle_between(a: &Rotation3<f64>, b: &Rotation3<f64>) -> f64 {
    log_so3(&(a.inverse() * b)).norm()
}

pub fn rot_x(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), a)
}

pub fn rot_y(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), a)
}

pub fn rot_z(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), a)
}

/// Nearest rotation (Frobenius norm) to an arbitrary 3×3 matrix.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Rotation3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(svd.singular_values.imin(), svd.singular_values.imin())] = -1.0;
    }
    Rotation3::from_matrix_unchecked(u * d * v_t)
}

/// Largest deviation of RᵀR from identity and of det(R) from one.
pub fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    let e = (m.transpose() * m - Matrix3::identity()).abs().max();
    e.max((m.determinant() - 1.0).abs())
}

/// Wraps an angle to (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}
