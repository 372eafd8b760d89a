//! Rigid transforms in the plane and in space.
//!
//! Rotations are kept as plain 3x3 matrices so that the perturbation used by
//! the ground solver acts directly on matrix entries. Long composition chains
//! are re-orthonormalized automatically.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

/// Tolerance on `RᵀR − I` accepted when constructing a transform.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Compositions after which the rotation is projected back onto SO(3).
const RENORMALIZE_EVERY: u32 = 1000;

/// Rigid transform in 3D acting as `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy)]
pub struct Se3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    chain: u32,
}

impl Default for Se3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Se3 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            chain: 0,
        }
    }

    /// Builds a transform, rejecting non-orthonormal or reflected rotations.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entry".into()));
        }
        let err = orthonormality_error(&rotation);
        if err > ORTHONORMAL_TOL {
            return Err(Error::InvalidTransform(format!(
                "rotation not orthonormal (error {err:.3e})"
            )));
        }
        if rotation.determinant() < 0.0 {
            return Err(Error::InvalidTransform("rotation is a reflection".into()));
        }
        Ok(Self::from_parts_unchecked(rotation, translation))
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
            chain: 0,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::from_parts_unchecked(Matrix3::identity(), translation)
    }

    pub fn from_rotation(rotation: Rotation3<f64>) -> Self {
        Self::from_parts_unchecked(*rotation.matrix(), Vector3::zeros())
    }

    /// Z-Y-X Euler construction: `R = Rz(yaw)·Ry(pitch)·Rx(roll)`.
    pub fn from_rpy(roll: f64, pitch: f64, yaw: f64, translation: Vector3<f64>) -> Self {
        let r = Rotation3::from_euler_angles(roll, pitch, yaw);
        Self::from_parts_unchecked(*r.matrix(), translation)
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        Self::from_rotation(Rotation3::new(axis / n * angle))
    }

    /// Exponential map of the twist `[ρ, ω]` (translation part first).
    pub fn exp(tangent: &[f64; 6]) -> Self {
        let rho = Vector3::new(tangent[0], tangent[1], tangent[2]);
        let omega = Vector3::new(tangent[3], tangent[4], tangent[5]);
        let theta = omega.norm();
        let rotation = Rotation3::new(omega);
        let w = omega.cross_matrix();
        let v = if theta < 1e-10 {
            Matrix3::identity() + 0.5 * w
        } else {
            let t2 = theta * theta;
            Matrix3::identity()
                + (1.0 - theta.cos()) / t2 * w
                + (theta - theta.sin()) / (t2 * theta) * w * w
        };
        Self::from_parts_unchecked(*rotation.matrix(), v * rho)
    }

    /// Reads a row-major 3x4 `[R | t]` block.
    pub fn from_row_major_3x4(values: &[f64; 12]) -> Self {
        let rotation = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8],
            values[9], values[10],
        );
        let translation = Vector3::new(values[3], values[7], values[11]);
        Self::from_parts_unchecked(rotation, translation)
    }

    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    /// Homogeneous 4x4 matrix, row-major.
    pub fn to_row_major_4x4(&self) -> [f64; 16] {
        let m = self.to_row_major_3x4();
        let mut out = [0.0; 16];
        out[..12].copy_from_slice(&m);
        out[15] = 1.0;
        out
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
            chain: self.chain,
        }
    }

    /// `self · other`: applies `other` first.
    pub fn compose(&self, other: &Se3) -> Self {
        let mut out = Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            chain: self.chain.max(other.chain) + 1,
        };
        if out.chain > RENORMALIZE_EVERY {
            out = out.renormalized();
        }
        out
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Projects the rotation onto the closest proper rotation (polar decomposition).
    pub fn renormalized(&self) -> Self {
        Self::from_parts_unchecked(project_to_rotation(&self.rotation), self.translation)
    }

    pub fn roll(&self) -> f64 {
        self.rpy().0
    }

    pub fn pitch(&self) -> f64 {
        self.rpy().1
    }

    /// Heading in the Z-Y-X convention, `atan2(R₁₀, R₀₀)`.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    pub fn rpy(&self) -> (f64, f64, f64) {
        let r = &self.rotation;
        let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        (roll, pitch, self.yaw())
    }

    /// Magnitude of the rotation in radians.
    pub fn rotation_angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    /// Largest absolute elementwise difference to `other`.
    pub fn max_abs_diff(&self, other: &Se3) -> f64 {
        let dr = (self.rotation - other.rotation).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        dr.max(dt)
    }
}

// Serialized as the row-major 3x4 block.
impl serde::Serialize for Se3 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        serde::Serialize::serialize(&self.to_row_major_3x4(), s)
    }
}

impl<'de> serde::Deserialize<'de> for Se3 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = <[f64; 12]>::deserialize(d)?;
        let t = Se3::from_row_major_3x4(&v);
        Se3::new(*t.rotation(), *t.translation()).map_err(serde::de::Error::custom)
    }
}

impl Mul for Se3 {
    type Output = Se3;
    fn mul(self, rhs: Se3) -> Se3 {
        self.compose(&rhs)
    }
}

impl Mul<&Se3> for &Se3 {
    type Output = Se3;
    fn mul(self, rhs: &Se3) -> Se3 {
        self.compose(rhs)
    }
}

/// Frobenius norm of `RᵀR − I`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

/// Closest rotation matrix in the Frobenius sense.
pub fn project_to_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let d = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Rigid transform in the plane acting as `p ↦ R(angle)·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Se2 {
    angle: f64,
    translation: Vector2<f64>,
}

impl Default for Se2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Se2 {
    pub fn new(angle: f64, translation: Vector2<f64>) -> Self {
        Self {
            angle: wrap_angle(angle),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, Vector2::zeros())
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn translation(&self) -> &Vector2<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.angle.sin_cos();
        Vector2::new(c * p.x - s * p.y, s * p.x + c * p.y) + self.translation
    }

    pub fn compose(&self, other: &Se2) -> Se2 {
        let (s, c) = self.angle.sin_cos();
        let t = &other.translation;
        Se2::new(
            self.angle + other.angle,
            Vector2::new(c * t.x - s * t.y, s * t.x + c * t.y) + self.translation,
        )
    }

    pub fn inverse(&self) -> Se2 {
        let (s, c) = self.angle.sin_cos();
        let t = &self.translation;
        Se2::new(-self.angle, Vector2::new(-(c * t.x + s * t.y), s * t.x - c * t.y))
    }

    /// Same transform with its translation multiplied by `factor`.
    pub fn scale_translation(&self, factor: f64) -> Se2 {
        Se2::new(self.angle, self.translation * factor)
    }
}

/// Promotes a planar transform to a yaw rotation plus x/y translation.
pub fn se2_to_se3(t: &Se2) -> Se3 {
    let (s, c) = t.angle().sin_cos();
    let rotation = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
    Se3::from_parts_unchecked(
        rotation,
        Vector3::new(t.translation().x, t.translation().y, 0.0),
    )
}

/// Rotation about the z-axis.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_se2_promotes_to_identity() {
        let t = se2_to_se3(&Se2::identity());
        assert_eq!(t.max_abs_diff(&Se3::identity()), 0.0);
    }

    #[test]
    fn quarter_turn_promotion() {
        let t = se2_to_se3(&Se2::new(FRAC_PI_2, Vector2::new(1.0, 0.0)));
        let r = t.rotation();
        // cos(π/2) = 0, sin(π/2) = 1
        assert_abs_diff_eq!(r[(0, 0)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r[(0, 1)], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r[(1, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r[(1, 1)], 0.0, epsilon = 1e-15);
        assert_eq!(r[(2, 2)], 1.0);
        assert_eq!(*t.translation(), Vector3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(t.yaw(), FRAC_PI_2, epsilon = 1e-15);
    }

    #[test]
    fn pure_translation_promotion() {
        let t = se2_to_se3(&Se2::new(0.0, Vector2::new(0.0, -2.5)));
        assert_eq!(*t.rotation(), Matrix3::identity());
        assert_eq!(*t.translation(), Vector3::new(0.0, -2.5, 0.0));
    }

    #[test]
    fn angle_wraps_into_half_open_interval() {
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(2.5 * PI), 0.5 * PI, epsilon = 1e-12);
        assert_eq!(Se2::new(-PI, Vector2::zeros()).angle(), PI);
    }

    #[test]
    fn rejects_reflection_and_skew() {
        let refl = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Se3::new(refl, Vector3::zeros()).is_err());
        let mut skew = Matrix3::identity();
        skew[(0, 1)] = 1e-3;
        assert!(Se3::new(skew, Vector3::zeros()).is_err());
    }

    #[test]
    fn long_chains_stay_orthonormal() {
        let step = Se3::from_rpy(0.013, -0.021, 0.037, Vector3::new(0.1, 0.2, 0.0));
        let mut t = Se3::identity();
        for _ in 0..5000 {
            t = t * step;
        }
        assert!(orthonormality_error(t.rotation()) < 1e-12);
    }

    #[test]
    fn exp_of_pure_rotation_matches_axis_angle() {
        let t = Se3::exp(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.3]);
        assert_abs_diff_eq!(t.yaw(), 0.3, epsilon = 1e-15);
        let t = Se3::exp(&[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
        assert_eq!(*t.translation(), Vector3::new(1.0, 2.0, 3.0));
    }

    fn arb_se3() -> impl Strategy<Value = Se3> {
        (
            -PI..PI,
            -1.5..1.5f64,
            -PI..PI,
            prop::array::uniform3(-100.0..100.0f64),
        )
            .prop_map(|(r, p, y, t)| Se3::from_rpy(r, p, y, Vector3::from(t)))
    }

    proptest! {
        #[test]
        fn inverse_cancels(t in arb_se3()) {
            let id = t * t.inverse();
            prop_assert!(id.max_abs_diff(&Se3::identity()) < 1e-9);
            let id = t.inverse() * t;
            prop_assert!(id.max_abs_diff(&Se3::identity()) < 1e-9);
        }

        #[test]
        fn composition_is_associative(a in arb_se3(), b in arb_se3(), c in arb_se3()) {
            let l = (a * b) * c;
            let r = a * (b * c);
            prop_assert!(l.max_abs_diff(&r) < 1e-9);
        }

        #[test]
        fn se2_promotion_round_trips(angle in -PI..PI, x in -1e3..1e3f64, y in -1e3..1e3f64) {
            let t = Se2::new(angle, Vector2::new(x, y));
            let s = se2_to_se3(&t);
            prop_assert!((wrap_angle(s.yaw() - t.angle())).abs() < 1e-12);
            prop_assert!((s.translation().x - x).abs() < 1e-12);
            prop_assert!((s.translation().y - y).abs() < 1e-12);
            prop_assert_eq!(s.translation().z, 0.0);
        }

        #[test]
        fn se2_inverse_cancels(angle in -PI..PI, x in -1e3..1e3f64, y in -1e3..1e3f64) {
            let t = Se2::new(angle, Vector2::new(x, y));
            let id = t.compose(&t.inverse());
            prop_assert!(id.angle().abs() < 1e-12);
            prop_assert!(id.translation().norm() < 1e-9);
        }

        #[test]
        fn rpy_round_trips(r in -3.0..3.0f64, p in -1.5..1.5f64, y in -3.0..3.0f64) {
            let t = Se3::from_rpy(r, p, y, Vector3::zeros());
            let (r2, p2, y2) = t.rpy();
            prop_assert!((r - r2).abs() < 1e-9);
            prop_assert!((p - p2).abs() < 1e-9);
            prop_assert!((y - y2).abs() < 1e-9);
        }
    }
}
