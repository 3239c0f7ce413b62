//! Rotation-group arithmetic and the tracking-error maps.
//!
//! Attitude is stored as a unit quaternion and materialized as a rotation
//! matrix on demand. The inertial frame has `e3 = [0, 0, 1]` pointing along
//! gravity, so altitude above ground is `-p_z`.

use nalgebra::{Matrix3, Quaternion, SVector, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frobenius tolerance on `M + M^T` accepted by [`vee`].
pub const SKEW_TOLERANCE: f64 = 1e-9;

/// Gravity direction in the inertial frame.
pub fn e3() -> Vector3<f64> {
    Vector3::z()
}

/// Body-to-inertial rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    q: UnitQuaternion<f64>,
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self {
            q: UnitQuaternion::identity(),
        }
    }

    /// Builds a rotation from quaternion components, normalizing them.
    ///
    /// Returns `None` for a (near-)zero or non-finite quaternion.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        let raw = Quaternion::new(w, x, y, z);
        let norm = raw.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return None;
        }
        Some(Self {
            q: Unit::new_unchecked(raw / norm),
        })
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self { q }.renormalized()
    }

    /// Projects a (nearly) orthonormal matrix onto the closest rotation.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix(m);
        Self {
            q: UnitQuaternion::from_rotation_matrix(&rot),
        }
    }

    /// Rotation by `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        match Unit::try_new(*axis, 1e-15) {
            Some(axis) => Self {
                q: UnitQuaternion::from_axis_angle(&axis, angle),
            },
            None => Self::identity(),
        }
    }

    /// `exp(hat(phi))`.
    pub fn from_rotation_vector(phi: &Vector3<f64>) -> Self {
        Self {
            q: UnitQuaternion::from_scaled_axis(*phi),
        }
    }

    pub fn about_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle)
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.q
    }

    /// Components in `(w, x, y, z)` order.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.q.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.q.to_rotation_matrix().into_inner()
    }

    pub fn transpose(&self) -> Self {
        Self {
            q: self.q.inverse(),
        }
    }

    /// `self * other`, renormalized.
    pub fn compose(&self, other: &Self) -> Self {
        Self { q: self.q * other.q }.renormalized()
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q * v
    }

    /// Third body axis expressed in the inertial frame, `R e3`.
    pub fn thrust_axis(&self) -> Vector3<f64> {
        self.q * e3()
    }

    pub fn renormalized(self) -> Self {
        let raw = *self.q.quaternion();
        Self {
            q: Unit::new_unchecked(raw / raw.norm()),
        }
    }

    /// `|‖q‖ - 1|`.
    pub fn norm_defect(&self) -> f64 {
        (self.q.quaternion().norm() - 1.0).abs()
    }

    /// `‖MᵀM − I‖_F` of the materialized matrix.
    pub fn orthonormality_defect(&self) -> f64 {
        let m = self.matrix();
        (m.transpose() * m - Matrix3::identity()).norm()
    }

    /// Geodesic angle to `other` in radians.
    pub fn angle_to(&self, other: &Self) -> f64 {
        self.q.angle_to(&other.q)
    }
}

/// Skew-symmetric matrix with `hat(v) w = v × w`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]. Rejects inputs whose symmetric part exceeds
/// [`SKEW_TOLERANCE`] in Frobenius norm.
pub fn vee(m: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let defect = (m + m.transpose()).norm();
    if !(defect <= SKEW_TOLERANCE) {
        return Err(Error::NotSkew { defect });
    }
    Ok(vee_unchecked(m))
}

/// Reads the axial vector off the antisymmetric part without checking.
pub(crate) fn vee_unchecked(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// `e_R = ½ (R_dᵀR − RᵀR_d)^∨`.
pub fn attitude_error(rot: &Rotation, rot_d: &Rotation) -> Vector3<f64> {
    let x = rot_d.matrix().transpose() * rot.matrix();
    // X − Xᵀ is exactly antisymmetric in floating point.
    vee_unchecked(&(0.5 * (x - x.transpose())))
}

/// `e_ω = ω − RᵀR_d ω_d`.
pub fn rate_error(
    rot: &Rotation,
    rot_d: &Rotation,
    omega: &Vector3<f64>,
    omega_d: &Vector3<f64>,
) -> Vector3<f64> {
    omega - rot.matrix().transpose() * (rot_d.matrix() * omega_d)
}

/// Stacked tracking error `(e_p, e_v, e_R, e_ω)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorVector {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub att: Vector3<f64>,
    pub rate: Vector3<f64>,
}

impl ErrorVector {
    pub fn stacked(&self) -> SVector<f64, 12> {
        let mut e = SVector::<f64, 12>::zeros();
        e.fixed_rows_mut::<3>(0).copy_from(&self.pos);
        e.fixed_rows_mut::<3>(3).copy_from(&self.vel);
        e.fixed_rows_mut::<3>(6).copy_from(&self.att);
        e.fixed_rows_mut::<3>(9).copy_from(&self.rate);
        e
    }

    pub fn from_stacked(e: &SVector<f64, 12>) -> Self {
        Self {
            pos: e.fixed_rows::<3>(0).into_owned(),
            vel: e.fixed_rows::<3>(3).into_owned(),
            att: e.fixed_rows::<3>(6).into_owned(),
            rate: e.fixed_rows::<3>(9).into_owned(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.stacked().norm()
    }
}

pub fn stack_error(
    pos: Vector3<f64>,
    vel: Vector3<f64>,
    att: Vector3<f64>,
    rate: Vector3<f64>,
) -> ErrorVector {
    ErrorVector {
        pos,
        vel,
        att,
        rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn vec3() -> impl Strategy<Value = Vector3<f64>> {
        (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
    }

    fn rotation() -> impl Strategy<Value = Rotation> {
        (vec3(), -3.1..3.1f64).prop_map(|(axis, angle)| Rotation::from_axis_angle(&axis, angle))
    }

    #[test]
    fn hat_zero_and_e3() {
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
        let h = hat(&Vector3::z());
        assert_eq!(h[(0, 1)], -1.0);
        assert_eq!(h[(1, 0)], 1.0);
        assert_eq!(h * Vector3::x(), Vector3::y());
        assert_eq!(h[(0, 2)], 0.0);
        assert_eq!(h[(2, 1)], 0.0);
    }

    #[test]
    fn vee_inverts_hat() {
        let v = Vector3::new(1.0, -2.0, 3.0);
        assert_eq!(vee(&hat(&v)).unwrap(), v);
        let w = Vector3::new(4.0, 5.0, 6.0);
        assert_eq!(vee(&hat(&w)).unwrap(), w);
        assert_eq!(vee(&Matrix3::zeros()).unwrap(), Vector3::zeros());
    }

    #[test]
    fn vee_rejects_symmetric_part() {
        let mut m = hat(&Vector3::new(1.0, 2.0, 3.0));
        m[(0, 0)] = 1e-6;
        assert!(matches!(vee(&m), Err(Error::NotSkew { .. })));
    }

    #[test]
    fn vee_of_rz_skew_part() {
        for theta in [0.1, 0.7, -1.3, 2.9] {
            let r = Rotation::about_z(theta).matrix();
            let v = vee(&(0.5 * (r - r.transpose()))).unwrap();
            assert!((v - Vector3::new(0.0, 0.0, theta.sin())).norm() < 1e-15);
        }
    }

    #[test]
    fn attitude_error_cases() {
        let r = Rotation::from_axis_angle(&Vector3::new(1.0, 2.0, -0.5), 0.8);
        assert!(attitude_error(&r, &r).norm() < 1e-15);
        let theta = 0.6;
        let e = attitude_error(&Rotation::about_z(theta), &Rotation::identity());
        assert!((e - Vector3::new(0.0, 0.0, theta.sin())).norm() < 1e-15);
    }

    #[test]
    fn rate_error_cases() {
        let r = Rotation::from_axis_angle(&Vector3::new(0.3, 1.0, 0.2), 0.4);
        let w = Vector3::new(0.1, -0.2, 0.3);
        assert!(rate_error(&r, &r, &w, &w).norm() < 1e-15);
        assert_eq!(rate_error(&r, &Rotation::identity(), &w, &Vector3::zeros()), w);
        // Rz(π/2)ᵀ [1,0,0] = [0,-1,0], so e_ω = -[0,-1,0].
        let e = rate_error(
            &Rotation::about_z(FRAC_PI_2),
            &Rotation::identity(),
            &Vector3::zeros(),
            &Vector3::x(),
        );
        assert!((e - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn stacking_order() {
        assert_eq!(ErrorVector::default().stacked(), SVector::<f64, 12>::zeros());
        let e = stack_error(Vector3::x(), Vector3::zeros(), Vector3::zeros(), Vector3::zeros());
        let s = e.stacked();
        assert_eq!(s[0], 1.0);
        assert_eq!(s.rows(3, 9).norm(), 0.0);
        let e = stack_error(
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(-1.0, 0.5, 0.0),
            Vector3::new(0.1, 0.2, 0.3),
            Vector3::new(4.0, 0.0, -4.0),
        );
        let blocks = e.pos.norm_squared() + e.vel.norm_squared() + e.att.norm_squared() + e.rate.norm_squared();
        assert!((e.stacked().norm_squared() - blocks).abs() < 1e-12);
        assert_eq!(ErrorVector::from_stacked(&e.stacked()), e);
    }

    #[test]
    fn long_composition_stays_orthonormal() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut r = Rotation::identity();
        for _ in 0..1_000_000 {
            let step = Vector3::new(rng.gen_range(-1e-2..1e-2), rng.gen_range(-1e-2..1e-2), rng.gen_range(-1e-2..1e-2));
            r = r.compose(&Rotation::from_rotation_vector(&step));
        }
        assert!(r.orthonormality_defect() <= 1e-8);
        assert!(r.norm_defect() <= 1e-9);
        let det = r.matrix().determinant();
        assert!((det - 1.0).abs() <= 1e-9);
    }

    proptest! {
        #[test]
        fn vee_hat_round_trip(v in vec3()) {
            let back = vee(&hat(&v)).unwrap();
            prop_assert!((back - v).norm() <= 1e-15 * (1.0 + v.norm()));
        }

        #[test]
        fn hat_is_cross_product(v in vec3(), w in vec3()) {
            let h = hat(&v);
            prop_assert_eq!(h.transpose(), -h);
            prop_assert!((h * w - v.cross(&w)).norm() <= 1e-12 * (1.0 + v.norm() * w.norm()));
        }

        #[test]
        fn attitude_error_properties(a in rotation(), b in rotation()) {
            let e = attitude_error(&a, &b);
            prop_assert!(e.norm() <= 1.0 + 1e-12);
            prop_assert!((attitude_error(&b, &a) + e).norm() <= 1e-14);
            prop_assert!(a.orthonormality_defect() <= 1e-9);
            prop_assert!((a.matrix().determinant() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn attitude_error_vanishes_only_at_equality(a in rotation(), axis in vec3(), angle in 1e-3..FRAC_PI_2) {
            // Within 90° of each other, e_R = sin(angle)·axis is nonzero.
            let b = a.compose(&Rotation::from_axis_angle(&axis, angle));
            prop_assume!(axis.norm() > 1e-3);
            prop_assert!(attitude_error(&a, &b).norm() > 0.5 * angle.sin());
        }
    }
}
