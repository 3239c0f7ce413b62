//! Geometric tracking controller on SE(3) with optional disturbance
//! compensation, and the feedback-aggressiveness metric.
//!
//! ```text
//! F_d = m g e3 − m p̈_d + K_p e_p + K_v e_v
//! T   = F_d · R e3
//! τ   = −K_R e_R − K_ω e_ω + ω × Jω − J (hat(ω) RᵀR_d ω_d − RᵀR_d ω̇_d)
//! ```
//!
//! `R_d` has third column `F_d / ‖F_d‖` and its first column as close to the
//! yaw heading as that allows.

use nalgebra::{Matrix3, SMatrix, SVector, UnitQuaternion, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use crate::dynamics::{clamp_input, ControlInput, State, VehicleParams};
use crate::error::{Error, Result};
use crate::se3::{attitude_error, e3, hat, rate_error, stack_error, ErrorVector, Rotation};

/// Below this desired-force magnitude the thrust direction is undefined.
pub const SINGULAR_FORCE: f64 = 1e-6;

/// Step used to differentiate the reference attitude, s.
pub const ATTITUDE_FD_STEP: f64 = 1e-4;

/// Perturbation used by [`hfb_jacobian`].
pub const JACOBIAN_STEP: f64 = 1e-6;

/// Diagonal feedback gains. The effective translational gains are
/// `trans_scale · (K_p, K_v)`, the rotational ones `rot_scale · (K_R, K_ω)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains {
    pub kp: [f64; 3],
    pub kv: [f64; 3],
    pub kr: [f64; 3],
    pub kw: [f64; 3],
    #[serde(default = "one")]
    pub trans_scale: f64,
    #[serde(default = "one")]
    pub rot_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            kp: [6.0; 3],
            kv: [4.0; 3],
            kr: [8.0; 3],
            kw: [2.5; 3],
            trans_scale: 1.0,
            rot_scale: 1.0,
        }
    }
}

impl Gains {
    pub fn with_scales(&self, trans_scale: f64, rot_scale: f64) -> Self {
        Self {
            trans_scale,
            rot_scale,
            ..self.clone()
        }
    }

    pub fn with_trans_scale(&self, trans_scale: f64) -> Self {
        self.with_scales(trans_scale, self.rot_scale)
    }

    /// Multiplies every base diagonal entry by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        let m = |k: [f64; 3]| k.map(|c| alpha * c);
        Self {
            kp: m(self.kp),
            kv: m(self.kv),
            kr: m(self.kr),
            kw: m(self.kw),
            ..self.clone()
        }
    }

    pub fn zero() -> Self {
        Self::default().scaled(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.kp, self.kv, self.kr, self.kw]
            .iter()
            .flatten()
            .chain([&self.trans_scale, &self.rot_scale])
            .all(|k| *k > 0.0 && k.is_finite());
        if positive {
            Ok(())
        } else {
            Err(Error::Config("gain diagonals and scales must be positive".into()))
        }
    }

    fn diag(k: [f64; 3], s: f64) -> Matrix3<f64> {
        Matrix3::from_diagonal(&(Vector3::from(k) * s))
    }

    pub fn kp_matrix(&self) -> Matrix3<f64> {
        Self::diag(self.kp, self.trans_scale)
    }

    pub fn kv_matrix(&self) -> Matrix3<f64> {
        Self::diag(self.kv, self.trans_scale)
    }

    pub fn kr_matrix(&self) -> Matrix3<f64> {
        Self::diag(self.kr, self.rot_scale)
    }

    pub fn kw_matrix(&self) -> Matrix3<f64> {
        Self::diag(self.kw, self.rot_scale)
    }

    /// Block-diagonal `H = diag(K_p, K_v, K_R, K_ω)` with scales applied.
    pub fn h_matrix(&self) -> SMatrix<f64, 12, 12> {
        let mut h = SMatrix::<f64, 12, 12>::zeros();
        let blocks = [self.kp_matrix(), self.kv_matrix(), self.kr_matrix(), self.kw_matrix()];
        for (i, b) in blocks.iter().enumerate() {
            h.fixed_view_mut::<3, 3>(3 * i, 3 * i).copy_from(b);
        }
        h
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.h_matrix().norm()
    }
}

/// How a disturbance estimate `f̂ = (f̂_trans, f̂_rot)` enters the input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompensationMode {
    /// Ignore `f̂`.
    None,
    /// `f̂_trans` enters the desired force, so lateral components reorient
    /// the thrust axis; `f̂_rot` is subtracted from the torque.
    #[default]
    ForceAug,
    /// `u ← u + K_dyn(x) f̂`: only the thrust-axis component of `f̂_trans`
    /// is compensated.
    Kdyn,
}

/// Desired position, its derivatives, yaw, and the attitude reference
/// obtained from them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferencePoint {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub acc: Vector3<f64>,
    pub yaw: f64,
    pub yaw_rate: f64,
    pub rot_d: Rotation,
    pub omega_d: Vector3<f64>,
    pub omega_dot_d: Vector3<f64>,
}

/// Position, velocity, acceleration and yaw of a trajectory at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlatOutput {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub acc: Vector3<f64>,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl ReferencePoint {
    /// Hover at `pos` with yaw `yaw`.
    pub fn hover(pos: Vector3<f64>, yaw: f64) -> Self {
        Self {
            pos,
            vel: Vector3::zeros(),
            acc: Vector3::zeros(),
            yaw,
            yaw_rate: 0.0,
            rot_d: Rotation::about_z(yaw),
            omega_d: Vector3::zeros(),
            omega_dot_d: Vector3::zeros(),
        }
    }

    /// Evaluates `flat` at `t` and differentiates the feedforward attitude
    /// `R_d(t)` built from `g e3 − p̈_d(t)` by central differences.
    pub fn from_flat(flat: impl Fn(f64) -> FlatOutput, t: f64, gravity: f64) -> Self {
        let h = ATTITUDE_FD_STEP;
        let attitude = |s: f64| {
            let f = flat(s);
            desired_attitude(&(gravity * e3() - f.acc), f.yaw)
                .unwrap_or_else(|| Rotation::about_z(f.yaw))
        };
        let rate = |s: f64| {
            let rel = attitude(s - h).transpose().compose(&attitude(s + h));
            rel.quaternion().scaled_axis() / (2.0 * h)
        };
        let now = flat(t);
        Self {
            pos: now.pos,
            vel: now.vel,
            acc: now.acc,
            yaw: now.yaw,
            yaw_rate: now.yaw_rate,
            rot_d: attitude(t),
            omega_d: rate(t),
            omega_dot_d: (rate(t + h) - rate(t - h)) / (2.0 * h),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.pos, self.vel, self.acc, self.omega_d, self.omega_dot_d]
            .iter()
            .all(|v| v.iter().all(|c| c.is_finite()))
            && self.yaw.is_finite()
            && self.yaw_rate.is_finite()
    }
}

/// Attitude with thrust axis along `force` and heading as close to `yaw`
/// as possible. `None` when `force` is (nearly) zero or parallel to the
/// heading.
pub fn desired_attitude(force: &Vector3<f64>, yaw: f64) -> Option<Rotation> {
    let n = force.norm();
    if !(n >= SINGULAR_FORCE) {
        return None;
    }
    let b3 = force / n;
    let b1c = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let b2 = b3.cross(&b1c);
    let b2n = b2.norm();
    if b2n < 1e-9 {
        return None;
    }
    let b2 = b2 / b2n;
    let b1 = b2.cross(&b3);
    let m = Matrix3::from_columns(&[b1, b2, b3]);
    Some(Rotation::from_quaternion(UnitQuaternion::from_matrix(&m)))
}

/// The disturbance-compensation map `K_dyn(x)`: thrust row `[(R e3)ᵀ, 0]`,
/// torque rows `[0, −I]`.
pub fn kdyn_map(x: &State) -> SMatrix<f64, 4, 6> {
    let mut k = SMatrix::<f64, 4, 6>::zeros();
    k.fixed_view_mut::<1, 3>(0, 0).copy_from(&x.rot.thrust_axis().transpose());
    k.fixed_view_mut::<3, 3>(1, 3).copy_from(&(-Matrix3::identity()));
    k
}

/// Feedback part of the input as a function of the stacked error with
/// the state held fixed: thrust `(R e3)·(K_p e_p + K_v e_v)`, torque
/// `−K_R e_R − K_ω e_ω`.
pub fn feedback_terms(x: &State, gains: &Gains, e: &ErrorVector) -> Vector4<f64> {
    let force = gains.kp_matrix() * e.pos + gains.kv_matrix() * e.vel;
    let torque = -gains.kr_matrix() * e.att - gains.kw_matrix() * e.rate;
    Vector4::new(force.dot(&x.rot.thrust_axis()), torque.x, torque.y, torque.z)
}

/// `∂(h_fb(x) H e)/∂e` at `e = 0` by central differences.
pub fn hfb_jacobian(x: &State, gains: &Gains) -> Result<SMatrix<f64, 4, 12>> {
    let h = JACOBIAN_STEP;
    let mut jac = SMatrix::<f64, 4, 12>::zeros();
    for i in 0..12 {
        let mut e = SVector::<f64, 12>::zeros();
        e[i] = h;
        let plus = feedback_terms(x, gains, &ErrorVector::from_stacked(&e));
        let minus = feedback_terms(x, gains, &ErrorVector::from_stacked(&(-e)));
        jac.set_column(i, &((plus - minus) / (2.0 * h)));
    }
    if jac.iter().all(|c| c.is_finite()) {
        Ok(jac)
    } else {
        Err(Error::NonFiniteJacobian)
    }
}

/// Feedback-induced aggressiveness `s(H, x) = ‖h_fb(x) H‖₂`.
pub fn aggressiveness(gains: &Gains, x: &State) -> f64 {
    match hfb_jacobian(x, gains) {
        Ok(j) => j.singular_values().max(),
        Err(_) => f64::NAN,
    }
}

/// Everything the controller computed for one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlOutput {
    /// Input after clamping.
    pub input: ControlInput,
    pub unclamped: ControlInput,
    pub error: ErrorVector,
    pub rot_d: Rotation,
    /// The desired force was degenerate and the previous `R_d` was held.
    pub singular: bool,
    pub clamped: bool,
}

/// Tracking controller. The only state is the last valid attitude
/// command, held through thrust-direction singularities.
#[derive(Clone, Debug)]
pub struct Controller {
    pub gains: Gains,
    pub mode: CompensationMode,
    pub params: VehicleParams,
    held: Option<Rotation>,
    singular_steps: usize,
    command_dt: Option<f64>,
    history: Option<Rotation>,
}

impl Controller {
    pub fn new(gains: Gains, mode: CompensationMode, params: VehicleParams) -> Self {
        Self {
            gains,
            mode,
            params,
            held: None,
            singular_steps: 0,
            command_dt: None,
            history: None,
        }
    }

    /// Takes `ω_d` from the backward difference of the commanded attitude
    /// over consecutive calls spaced `dt` apart, instead of from the
    /// reference alone; `ω̇_d` still comes from the reference. The first
    /// call falls back to the reference rate.
    pub fn with_command_rates(mut self, dt: f64) -> Self {
        self.command_dt = Some(dt);
        self
    }

    pub fn singular_steps(&self) -> usize {
        self.singular_steps
    }

    /// Desired force including any force-augmentation term.
    pub fn desired_force(&self, x: &State, r: &ReferencePoint, fhat: Option<&Vector6<f64>>) -> Vector3<f64> {
        let m = self.params.mass;
        let mut f = m * self.params.gravity * e3() - m * r.acc
            + self.gains.kp_matrix() * (x.pos - r.pos)
            + self.gains.kv_matrix() * (x.vel - r.vel);
        if let (CompensationMode::ForceAug, Some(fh)) = (self.mode, fhat) {
            f += fh.fixed_rows::<3>(0);
        }
        f
    }

    fn command_rates(&mut self, rot_d: &Rotation, r: &ReferencePoint) -> (Vector3<f64>, Vector3<f64>) {
        let Some(dt) = self.command_dt else {
            return (r.omega_d, r.omega_dot_d);
        };
        let omega_d = match self.history {
            None => r.omega_d,
            Some(prev) => prev.transpose().compose(rot_d).quaternion().scaled_axis() / dt,
        };
        self.history = Some(*rot_d);
        (omega_d, r.omega_dot_d)
    }

    pub fn compute(&mut self, x: &State, r: &ReferencePoint, fhat: Option<&Vector6<f64>>) -> ControlOutput {
        let force = self.desired_force(x, r, fhat);
        let (rot_d, singular) = match desired_attitude(&force, r.yaw) {
            Some(rd) => {
                self.held = Some(rd);
                (rd, false)
            }
            None => {
                self.singular_steps += 1;
                (self.held.unwrap_or(r.rot_d), true)
            }
        };

        let (omega_d, omega_dot_d) = self.command_rates(&rot_d, r);
        let rm = x.rot.matrix();
        let rdm = rot_d.matrix();
        let error = stack_error(
            x.pos - r.pos,
            x.vel - r.vel,
            attitude_error(&x.rot, &rot_d),
            rate_error(&x.rot, &rot_d, &x.omega, &omega_d),
        );
        let j = self.params.inertia_matrix();
        let rel = rm.transpose() * rdm;
        let feedforward = x.omega.cross(&(j * x.omega))
            - j * (hat(&x.omega) * rel * omega_d - rel * omega_dot_d);
        let mut torque = -self.gains.kr_matrix() * error.att - self.gains.kw_matrix() * error.rate + feedforward;
        let mut thrust = force.dot(&x.rot.thrust_axis());

        if let Some(fh) = fhat {
            match self.mode {
                CompensationMode::None => {}
                CompensationMode::ForceAug => torque -= fh.fixed_rows::<3>(3),
                CompensationMode::Kdyn => {
                    let du = kdyn_map(x) * fh;
                    thrust += du[0];
                    torque += du.fixed_rows::<3>(1);
                }
            }
        }

        let unclamped = ControlInput::new(thrust, torque);
        let input = clamp_input(&unclamped, &self.params);
        ControlOutput {
            input,
            unclamped,
            error,
            rot_d,
            singular,
            clamped: input != unclamped,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn command_rates_follow_the_attitude_command() {
        let dt = 1e-3;
        let rate = 0.7;
        let mut c = Controller::new(Gains::default(), CompensationMode::ForceAug, params()).with_command_rates(dt);
        let here = Vector3::new(0.0, 0.0, -1.0);
        let x = State::at_rest(here);
        for k in 0..3 {
            // The reference itself carries no yaw rate; only the command turns.
            let out = c.compute(&x, &ReferencePoint::hover(here, rate * k as f64 * dt), None);
            let omega_d = -(out.rot_d.matrix().transpose() * out.error.rate);
            let expected = if k == 0 { Vector3::zeros() } else { Vector3::z() * rate };
            assert!((omega_d - expected).norm() < 1e-9, "step {k}: {omega_d}");
        }
    }

    #[test]
    fn hover_equilibrium_input() {
        let p = params();
        let mut c = Controller::new(Gains::default(), CompensationMode::ForceAug, p.clone());
        let out = c.compute(&State::default(), &ReferencePoint::hover(Vector3::zeros(), 0.0), None);
        assert!((out.input.thrust - p.mass * p.gravity).abs() < 1e-12);
        assert!(out.input.torque.norm() < 1e-12);
        assert!(!out.singular && !out.clamped);
    }

    #[test]
    fn vertical_channel_reduces_to_scalar_law() {
        // Kp_z = m h1, Kv_z = m h2 in the scalar law T = m(g + h1 x1 + h2 x2) + f̂.
        let p = VehicleParams {
            mass: 1.3,
            ..params()
        };
        let (h1, h2) = (5.0, 3.0);
        let gains = Gains {
            kp: [1.0, 1.0, p.mass * h1],
            kv: [1.0, 1.0, p.mass * h2],
            ..Gains::default()
        };
        let (x1, x2) = (0.07, -0.2);
        let x = State {
            pos: Vector3::new(0.0, 0.0, -1.0 + x1),
            vel: Vector3::new(0.0, 0.0, x2),
            ..State::default()
        };
        let r = ReferencePoint::hover(Vector3::new(0.0, 0.0, -1.0), 0.0);
        let fz = 0.4;
        let fhat = Vector6::new(0.0, 0.0, fz, 0.0, 0.0, 0.0);
        for mode in [CompensationMode::ForceAug, CompensationMode::Kdyn] {
            let mut c = Controller::new(gains.clone(), mode, p.clone());
            let out = c.compute(&x, &r, Some(&fhat));
            let expected = p.mass * (p.gravity + h1 * x1 + h2 * x2) + fz;
            assert!((out.input.thrust - expected).abs() < 1e-12, "{mode:?}");
            assert!(out.input.torque.norm() < 1e-12);
        }
    }

    #[test]
    fn kdyn_rows() {
        let k = kdyn_map(&State::default());
        assert_eq!(k.row(0).clone_owned(), SMatrix::<f64, 1, 6>::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0));
        assert_eq!(k.fixed_view::<3, 3>(1, 3).clone_owned(), -Matrix3::identity());
        let x = State {
            rot: Rotation::from_axis_angle(&Vector3::new(1.0, 2.0, 0.5), 0.7),
            ..State::default()
        };
        let k = kdyn_map(&x);
        assert!((k.row(0).norm() - 1.0).abs() < 1e-12);
        let lateral = x.rot.rotate(&Vector3::x());
        let mut f = Vector6::zeros();
        f.fixed_rows_mut::<3>(0).copy_from(&lateral);
        assert!((k * f)[0].abs() < 1e-12);
    }

    #[test]
    fn kdyn_ignores_lateral_force_while_force_aug_tilts() {
        let r = ReferencePoint::hover(Vector3::zeros(), 0.0);
        let fhat = Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let mut kd = Controller::new(Gains::default(), CompensationMode::Kdyn, params());
        let mut fa = Controller::new(Gains::default(), CompensationMode::ForceAug, params());
        let a = kd.compute(&State::default(), &r, Some(&fhat));
        let b = fa.compute(&State::default(), &r, Some(&fhat));
        assert_eq!(a.rot_d, Rotation::identity());
        assert!(b.rot_d.angle_to(&Rotation::identity()) > 0.05);
    }

    #[test]
    fn singular_force_holds_previous_attitude() {
        let p = params();
        let mut c = Controller::new(Gains::default(), CompensationMode::None, p.clone());
        let tilted = ReferencePoint {
            acc: Vector3::new(1.0, 0.0, 0.0),
            ..ReferencePoint::hover(Vector3::zeros(), 0.0)
        };
        let first = c.compute(&State::default(), &tilted, None);
        assert!(!first.singular);
        // Free fall reference: g e3 − p̈_d = 0.
        let falling = ReferencePoint {
            acc: p.gravity * e3(),
            ..ReferencePoint::hover(Vector3::zeros(), 0.0)
        };
        let second = c.compute(&State::default(), &falling, None);
        assert!(second.singular);
        assert_eq!(second.rot_d, first.rot_d);
        assert_eq!(c.singular_steps(), 1);
    }

    #[test]
    fn desired_attitude_hover_and_yaw() {
        let g = 9.81 * e3();
        assert!(desired_attitude(&g, 0.0).unwrap().angle_to(&Rotation::identity()) < 1e-12);
        let r = desired_attitude(&g, 0.4).unwrap();
        assert!(r.angle_to(&Rotation::about_z(0.4)) < 1e-12);
        assert!(desired_attitude(&Vector3::zeros(), 0.0).is_none());
        let tilt = Vector3::new(1.0, -2.0, 9.0);
        let r = desired_attitude(&tilt, 1.0).unwrap();
        assert!((r.thrust_axis() - tilt.normalize()).norm() < 1e-12);
    }

    #[test]
    fn reference_rates_match_rotating_heading() {
        // Constant yaw rate at hover: ω_d = [0, 0, w], ω̇_d = 0.
        let w = 0.7;
        let flat = |t: f64| FlatOutput {
            pos: Vector3::zeros(),
            vel: Vector3::zeros(),
            acc: Vector3::zeros(),
            yaw: w * t,
            yaw_rate: w,
        };
        let r = ReferencePoint::from_flat(flat, 1.3, 9.81);
        assert!((r.omega_d - Vector3::new(0.0, 0.0, w)).norm() < 1e-8);
        assert!(r.omega_dot_d.norm() < 1e-5);
    }

    #[test]
    fn jacobian_vertical_entries_and_zero_gains() {
        let gains = Gains::default();
        let j = hfb_jacobian(&State::default(), &gains).unwrap();
        assert!((j[(0, 2)] - 6.0).abs() < 1e-8);
        assert!((j[(0, 5)] - 4.0).abs() < 1e-8);
        assert!(j[(0, 0)].abs() < 1e-12);
        assert!((j[(1, 6)] + 8.0).abs() < 1e-8);
        assert!((j[(3, 11)] + 2.5).abs() < 1e-8);
        assert_eq!(hfb_jacobian(&State::default(), &Gains::zero()).unwrap(), SMatrix::<f64, 4, 12>::zeros());
        assert_eq!(aggressiveness(&Gains::zero(), &State::default()), 0.0);
    }

    #[test]
    fn doubling_gains_doubles_jacobian() {
        let x = State {
            rot: Rotation::from_axis_angle(&Vector3::new(0.3, 1.0, 0.0), 0.4),
            ..State::default()
        };
        let a = hfb_jacobian(&x, &Gains::default()).unwrap();
        let b = hfb_jacobian(&x, &Gains::default().scaled(2.0)).unwrap();
        assert!((b - 2.0 * a).norm() < 1e-8);
    }

    #[test]
    fn frobenius_norm_of_default_h() {
        let expected = (3.0f64 * (36.0 + 16.0 + 64.0 + 6.25)).sqrt();
        assert!((Gains::default().frobenius_norm() - expected).abs() < 1e-12);
    }

    #[test]
    fn aggressiveness_is_nondecreasing_in_trans_scale() {
        let mut prev = 0.0;
        for i in 0..16 {
            let s = aggressiveness(&Gains::default().with_trans_scale(1.0 + 0.1 * i as f64), &State::default());
            assert!(s >= prev - 1e-12);
            prev = s;
        }
    }

    proptest! {
        #[test]
        fn aggressiveness_homogeneous(alpha in 0.0..5.0f64, ax in -1.0..1.0f64, ay in -1.0..1.0f64, angle in 0.0..3.0f64) {
            let axis = Vector3::new(ax, ay, 0.5);
            let x = State { rot: Rotation::from_axis_angle(&axis, angle), ..State::default() };
            let g = Gains::default();
            let s = aggressiveness(&g, &x);
            let sa = aggressiveness(&g.scaled(alpha), &x);
            prop_assert!((sa - alpha * s).abs() <= 1e-9 * (alpha * s).max(1.0));
        }
    }
}
