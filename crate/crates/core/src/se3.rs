//! Rigid transforms in SE(3) and twists in se(3).
//!
//! Rotations are stored as 3x3 matrices. Long chains of compositions slowly
//! lose orthonormality, so every [`Pose`] carries a small composition counter
//! and is re-projected onto SO(3) (polar decomposition) every
//! [`REORTHONORMALIZE_EVERY`] compositions, or sooner if `RᵀR` drifts more
//! than [`ORTHONORMAL_DRIFT_LIMIT`] away from identity.

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3, Vector6};
use std::f64::consts::PI;
use std::fmt;
use thiserror::Error;

/// Compositions between forced re-orthonormalizations.
pub const REORTHONORMALIZE_EVERY: u16 = 1000;
/// `‖RᵀR − I‖∞` beyond which a rotation is re-orthonormalized immediately.
pub const ORTHONORMAL_DRIFT_LIMIT: f64 = 1e-7;
/// Distance from π below which [`Pose::try_log`] refuses to pick an axis sign.
pub const NEAR_PI_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Se3Error {
    #[error("near-singular rotation: angle {angle} is within {NEAR_PI_THRESHOLD} of pi")]
    NearSingularRotation { angle: f64 },
    #[error("matrix is not a rigid transform: {0}")]
    NotRigid(String),
}

/// Rigid transform: `x ↦ R·x + t`.
#[derive(Clone, Copy)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    age: u16,
}

/// Element of se(3); `angular` is an axis-angle vector in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl PartialEq for Pose {
    fn eq(&self, other: &Self) -> bool {
        self.rotation == other.rotation && self.translation == other.translation
    }
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.rotation;
        f.debug_struct("Pose")
            .field(
                "rotation",
                &[
                    [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                    [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                    [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
                ],
            )
            .field(
                "translation",
                &[self.translation.x, self.translation.y, self.translation.z],
            )
            .finish()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            age: 0,
        }
    }

    /// Builds a pose from a rotation that is assumed to already be in SO(3).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
            age: 0,
        }
    }

    /// Like [`Pose::new`] but projects `rotation` onto SO(3) first.
    pub fn from_parts_orthonormalized(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(orthonormalize(&rotation), translation)
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Matrix3::identity(), Vector3::new(x, y, z))
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_rotation(rotation_about(&Vector3::x(), angle))
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_rotation(rotation_about(&Vector3::y(), angle))
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_rotation(rotation_about(&Vector3::z(), angle))
    }

    /// Rotation of `angle` radians about a unit `axis`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::from_rotation(rotation_about(axis, angle))
    }

    /// Fixed-axis roll/pitch/yaw (rotate about X, then Y, then Z of the parent
    /// frame), i.e. `R = Rz(yaw)·Ry(pitch)·Rx(roll)`, as used by URDF.
    pub fn from_xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Self {
        let rx = rotation_about(&Vector3::x(), rpy[0]);
        let ry = rotation_about(&Vector3::y(), rpy[1]);
        let rz = rotation_about(&Vector3::z(), rpy[2]);
        Self::new(rz * ry * rx, Vector3::new(xyz[0], xyz[1], xyz[2]))
    }

    /// Inverse of [`Pose::from_xyz_rpy`]'s rotation part.
    pub fn rpy(&self) -> [f64; 3] {
        let r = &self.rotation;
        let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        if r[(2, 0)].abs() < 1.0 - 1e-12 {
            [
                r[(2, 1)].atan2(r[(2, 2)]),
                pitch,
                r[(1, 0)].atan2(r[(0, 0)]),
            ]
        } else {
            // gimbal lock: fold yaw into roll
            [(-r[(1, 2)]).atan2(r[(1, 1)]), pitch, 0.0]
        }
    }

    /// Unit quaternion in `[x, y, z, w]` order with `w ≥ 0`.
    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let q =
            UnitQuaternion::from_matrix_eps(&self.rotation, 1e-12, 100, UnitQuaternion::identity());
        let q = if q.w < 0.0 {
            -q.into_inner()
        } else {
            q.into_inner()
        };
        [q.i, q.j, q.k, q.w]
    }

    /// Builds a pose from an `[x, y, z, w]` quaternion (normalized here).
    pub fn from_quaternion_xyzw(q: [f64; 4], translation: Vector3<f64>) -> Result<Self, Se3Error> {
        let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
        let norm = quat.norm();
        if !norm.is_finite() || norm < 1e-9 {
            return Err(Se3Error::NotRigid(format!(
                "quaternion {q:?} has no direction"
            )));
        }
        let unit = UnitQuaternion::from_quaternion(quat);
        Ok(Self::new(
            unit.to_rotation_matrix().into_inner(),
            translation,
        ))
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn with_translation(mut self, translation: Vector3<f64>) -> Self {
        self.translation = translation;
        self
    }

    /// Homogeneous product `self · other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut out = Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            age: self.age.max(other.age).saturating_add(1),
        };
        if out.age >= REORTHONORMALIZE_EVERY
            || orthonormal_drift(&out.rotation) > ORTHONORMAL_DRIFT_LIMIT
        {
            out.rotation = orthonormalize(&out.rotation);
            out.age = 0;
        }
        out
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
            age: self.age,
        }
    }

    /// `self⁻¹ · other`, the pose of `other` expressed in this frame.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotation angle in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle_parts(&self.rotation).0
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// `RᵀR = I` and `det R = +1` within `tol`.
    pub fn is_rigid(&self, tol: f64) -> bool {
        self.is_finite()
            && orthonormal_drift(&self.rotation) <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>, tol: f64) -> Result<Pose, Se3Error> {
        let bottom = m.fixed_view::<1, 4>(3, 0);
        if (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs()) > tol {
            return Err(Se3Error::NotRigid("bottom row is not [0 0 0 1]".into()));
        }
        let pose = Pose::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        );
        if !pose.is_rigid(tol) {
            return Err(Se3Error::NotRigid("rotation block is not in SO(3)".into()));
        }
        Ok(pose)
    }

    /// Largest componentwise difference of the homogeneous matrices.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        let dr = (self.rotation - other.rotation).amax();
        let dt = (self.translation - other.translation).amax();
        dr.max(dt)
    }

    pub fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        self.max_abs_diff(other) <= tol
    }

    /// Logarithm map. Fails within [`NEAR_PI_THRESHOLD`] of a half-turn where
    /// the axis sign is not recoverable from the rotation alone.
    pub fn try_log(&self) -> Result<Twist, Se3Error> {
        let (angle, _, _) = rotation_angle_parts(&self.rotation);
        if PI - angle < NEAR_PI_THRESHOLD {
            return Err(Se3Error::NearSingularRotation { angle });
        }
        Ok(self.log())
    }

    /// Logarithm map, total. Near a half-turn the axis is taken from the
    /// column of `R + I` with the largest diagonal entry, oriented to agree
    /// with the antisymmetric part when that is non-zero.
    pub fn log(&self) -> Twist {
        let angular = so3_log(&self.rotation);
        let theta = angular.norm();
        let k = hat(&angular);
        let d = if theta < 1e-4 {
            1.0 / 12.0 + theta * theta / 720.0
        } else {
            let a = theta.sin() / theta;
            let b = one_minus_cos_over_sq(theta);
            (1.0 - a / (2.0 * b)) / (theta * theta)
        };
        let v_inv = Matrix3::identity() - 0.5 * k + d * k * k;
        Twist {
            linear: v_inv * self.translation,
            angular,
        }
    }

    /// Exponential map.
    pub fn exp(twist: &Twist) -> Pose {
        let theta = twist.angular.norm();
        let k = hat(&twist.angular);
        let k2 = k * k;
        let a = if theta < 1e-4 {
            1.0 - theta * theta / 6.0
        } else {
            theta.sin() / theta
        };
        let b = one_minus_cos_over_sq(theta);
        let c = if theta < 1e-2 {
            let t2 = theta * theta;
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        } else {
            (theta - theta.sin()) / (theta * theta * theta)
        };
        let rotation = Matrix3::identity() + a * k + b * k2;
        let v = Matrix3::identity() + b * k + c * k2;
        Pose::new(rotation, v * twist.linear)
    }
}

impl Twist {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// `[linear; angular]`.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            linear: Vector3::new(v[0], v[1], v[2]),
            angular: Vector3::new(v[3], v[4], v[5]),
        }
    }

    /// Both parts rotated by `rotation` (no translation coupling).
    pub fn rotated(&self, rotation: &Matrix3<f64>) -> Twist {
        Twist {
            linear: rotation * self.linear,
            angular: rotation * self.angular,
        }
    }
}

pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `‖RᵀR − I‖∞` (max-abs entry).
pub fn orthonormal_drift(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

/// Nearest rotation in the Frobenius sense (`U·Vᵀ` of the SVD).
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Matrix3::identity(),
    };
    let mut out = u * v_t;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * v_t;
    }
    out
}

fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let n = axis.norm();
    if n == 0.0 {
        return Matrix3::identity();
    }
    let k = hat(&(axis / n));
    Matrix3::identity() + angle.sin() * k + (1.0 - angle.cos()) * k * k
}

/// `(1 − cos θ)/θ²`, stable for small θ.
fn one_minus_cos_over_sq(theta: f64) -> f64 {
    if theta < 1e-4 {
        0.5 - theta * theta / 24.0
    } else {
        let s = (0.5 * theta).sin();
        2.0 * s * s / (theta * theta)
    }
}

/// `(angle, cos, sin·axis)`.
fn rotation_angle_parts(r: &Matrix3<f64>) -> (f64, f64, Vector3<f64>) {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let w = 0.5 * vee(&(r - r.transpose()));
    (w.norm().atan2(cos), cos, w)
}

fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let (theta, cos, w) = rotation_angle_parts(r);
    let s = w.norm();
    if cos > -0.9 {
        let factor = if s < 1e-12 {
            1.0 + theta * theta / 6.0
        } else {
            theta / s
        };
        return w * factor;
    }
    // Close to a half-turn the antisymmetric part vanishes; recover the axis
    // from the symmetric part (1 − cos)·a·aᵀ instead.
    let sym = 0.5 * (r + r.transpose()) - cos * Matrix3::identity();
    let rpi = r + Matrix3::identity();
    let mut k = 0;
    for i in 1..3 {
        if rpi[(i, i)].abs() > rpi[(k, k)].abs() {
            k = i;
        }
    }
    let col = sym.column(k).into_owned();
    let norm = col.norm();
    if norm == 0.0 {
        return Vector3::zeros();
    }
    let mut axis = col / norm;
    if s > 0.0 && axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_cases() {
        let p = Pose::from_xyz_rpy([0.3, -0.2, 0.5], [0.4, -0.7, 1.9]);
        assert_eq!(Pose::identity().compose(&p), p);
        assert!(p.compose(&p.inverse()).approx_eq(&Pose::identity(), 1e-12));
        assert_eq!(Pose::identity().inverse(), Pose::identity());
    }

    #[test]
    fn hand_multiplied_composition() {
        // [Rz(90) | (1,0,0)] · [I | (1,0,0)] = [Rz(90) | (1,1,0)]
        let a = Pose::rot_z(PI / 2.0).with_translation(Vector3::new(1.0, 0.0, 0.0));
        let b = Pose::from_translation(1.0, 0.0, 0.0);
        let c = a.compose(&b);
        assert!(c.approx_eq(
            &Pose::rot_z(PI / 2.0).with_translation(Vector3::new(1.0, 1.0, 0.0)),
            1e-15
        ));
    }

    #[test]
    fn pure_translation_inverse_negates() {
        let p = Pose::from_translation(1.0, 2.0, 3.0).inverse();
        assert_eq!(p, Pose::from_translation(-1.0, -2.0, -3.0));
    }

    #[test]
    fn log_of_simple_poses() {
        let t = Pose::identity().log();
        assert_eq!(t.to_vector(), Vector6::zeros());
        let t = Pose::from_translation(0.1, 0.0, 0.0).log();
        assert_relative_eq!(t.linear, Vector3::new(0.1, 0.0, 0.0));
        assert_eq!(t.angular, Vector3::zeros());
        let t = Pose::exp(&Twist::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros()));
        assert_eq!(t, Pose::from_translation(1.0, 0.0, 0.0));
        assert_eq!(Pose::exp(&Twist::zero()), Pose::identity());
    }

    #[test]
    fn near_pi_reports_and_falls_back() {
        let p = Pose::rot_x(PI);
        assert!(matches!(
            p.try_log(),
            Err(Se3Error::NearSingularRotation { .. })
        ));
        let t = p.log();
        // branch: largest diagonal of R + I is the x entry, positive sign
        assert_relative_eq!(t.angular, Vector3::new(PI, 0.0, 0.0), epsilon = 1e-12);
        assert!(Pose::exp(&t).approx_eq(&p, 1e-12));
        let q = Pose::rot_y(PI - 1e-7);
        assert!(q.try_log().is_err());
        assert!(Pose::exp(&q.log()).approx_eq(&q, 1e-9));
    }

    #[test]
    fn rpy_roundtrip() {
        let rpy = [0.3, -1.1, 2.5];
        let p = Pose::from_xyz_rpy([0.0; 3], rpy);
        let back = p.rpy();
        for i in 0..3 {
            assert_relative_eq!(back[i], rpy[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn quaternion_roundtrip() {
        let p = Pose::from_xyz_rpy([0.1, 0.2, 0.3], [0.3, -1.1, 2.5]);
        let q = p.quaternion_xyzw();
        let back = Pose::from_quaternion_xyzw(q, *p.translation()).unwrap();
        assert!(back.approx_eq(&p, 1e-12));
        assert!(Pose::from_quaternion_xyzw([0.0; 4], Vector3::zeros()).is_err());
    }

    #[test]
    fn repeated_composition_stays_orthonormal() {
        let step = Pose::from_xyz_rpy([0.001, 0.0, 0.0], [1e-3, 2e-3, -3e-3]);
        let mut p = Pose::identity();
        for _ in 0..1_000_000 {
            p = p.compose(&step);
        }
        assert!(orthonormal_drift(p.rotation()) < 1e-6);
        assert!((p.rotation().determinant() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn homogeneous_roundtrip() {
        let p = Pose::from_xyz_rpy([0.1, 0.2, 0.3], [0.3, -1.1, 2.5]);
        let m = p.to_homogeneous();
        assert_eq!(Pose::from_homogeneous(&m, 1e-9).unwrap(), p);
        let mut bad = m;
        bad[(0, 0)] = 2.0;
        assert!(Pose::from_homogeneous(&bad, 1e-9).is_err());
    }
}
