//! Rigid-body quadrotor plant with injected generalized disturbances.
//!
//! ```text
//! ṗ = v
//! Ṙ = R hat(ω)
//! m v̇ = m g e3 − T R e3 + f_trans
//! J ω̇ = −ω × Jω + τ + f_rot
//! ```
//!
//! This is the only module that evaluates the ground-truth disturbance.
//! Integration is classical RK4 with the input held over the step and the
//! quaternion renormalized afterwards.

use nalgebra::{Matrix3, Quaternion, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{e3, Rotation};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub rot: Rotation,
    pub omega: Vector3<f64>,
}

impl Default for State {
    fn default() -> Self {
        Self::at_rest(Vector3::zeros())
    }
}

impl State {
    pub fn at_rest(pos: Vector3<f64>) -> Self {
        Self {
            pos,
            vel: Vector3::zeros(),
            rot: Rotation::identity(),
            omega: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.first_non_finite().is_none()
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        let finite = |v: &Vector3<f64>| v.iter().all(|c| c.is_finite());
        if !finite(&self.pos) {
            Some("position")
        } else if !finite(&self.vel) {
            Some("velocity")
        } else if !self.rot.wxyz().iter().all(|c| c.is_finite()) {
            Some("attitude")
        } else if !finite(&self.omega) {
            Some("angular rate")
        } else {
            None
        }
    }

    fn to_vector(self) -> SVector<f64, 13> {
        let q = self.rot.wxyz();
        let mut x = SVector::<f64, 13>::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.pos);
        x.fixed_rows_mut::<3>(3).copy_from(&self.vel);
        for (i, c) in q.iter().enumerate() {
            x[6 + i] = *c;
        }
        x.fixed_rows_mut::<3>(10).copy_from(&self.omega);
        x
    }

    /// Inverse of `to_vector`; the quaternion block is renormalized.
    fn from_vector(x: &SVector<f64, 13>) -> Self {
        let rot = Rotation::from_wxyz(x[6], x[7], x[8], x[9]).unwrap_or_else(|| {
            // Preserve the NaN so the divergence guard reports it.
            Rotation::from_quaternion(nalgebra::Unit::new_unchecked(Quaternion::new(
                f64::NAN,
                0.0,
                0.0,
                0.0,
            )))
        });
        Self {
            pos: x.fixed_rows::<3>(0).into_owned(),
            vel: x.fixed_rows::<3>(3).into_owned(),
            rot,
            omega: x.fixed_rows::<3>(10).into_owned(),
        }
    }
}

/// Collective thrust (N) and body torque (N·m).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub thrust: f64,
    pub torque: Vector3<f64>,
}

impl ControlInput {
    pub fn new(thrust: f64, torque: Vector3<f64>) -> Self {
        Self { thrust, torque }
    }

    pub fn is_finite(&self) -> bool {
        self.thrust.is_finite() && self.torque.iter().all(|c| c.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// Row-major inertia, kg·m².
    pub inertia: [[f64; 3]; 3],
    /// m/s²
    pub gravity: f64,
    /// N
    pub thrust_max: f64,
    /// Per-axis torque limit, N·m.
    pub torque_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        let mass = 1.0;
        let gravity = 9.81;
        Self {
            mass,
            inertia: [[0.082, 0.0, 0.0], [0.0, 0.0845, 0.0], [0.0, 0.0, 0.1377]],
            gravity,
            thrust_max: 4.0 * mass * gravity,
            torque_max: 2.0,
        }
    }
}

impl VehicleParams {
    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        let j = &self.inertia;
        Matrix3::new(
            j[0][0], j[0][1], j[0][2], j[1][0], j[1][1], j[1][2], j[2][0], j[2][1], j[2][2],
        )
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) || !(self.gravity > 0.0) {
            return Err(Error::Config("vehicle mass and gravity must be positive".into()));
        }
        if !(self.thrust_max > 0.0) || !(self.torque_max > 0.0) {
            return Err(Error::Config("input limits must be positive".into()));
        }
        let j = self.inertia_matrix();
        if (j - j.transpose()).norm() > 1e-12 {
            return Err(Error::Config("inertia must be symmetric".into()));
        }
        if j.cholesky().is_none() {
            return Err(Error::Config("inertia must be positive definite".into()));
        }
        Ok(())
    }
}

/// Drag, lateral wind and oscillatory force/moment channels, all
/// multiplied by `scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceSpec {
    /// Diagonal of D_v, N·s/m.
    pub linear_drag: [f64; 3],
    /// Diagonal of D_ω, N·m·s.
    pub angular_drag: [f64; 3],
    /// N. Only the first two components enter the force.
    pub wind_amplitude: [f64; 3],
    /// rad/s
    pub wind_frequency: [f64; 3],
    /// N
    pub vertical_amplitude: f64,
    /// rad/s
    pub vertical_frequency: f64,
    /// N·m
    pub yaw_amplitude: f64,
    /// rad/s
    pub yaw_frequency: f64,
    /// DIST_SCALE
    pub scale: f64,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self {
            linear_drag: [0.30, 0.30, 0.40],
            angular_drag: [0.02, 0.02, 0.03],
            wind_amplitude: [0.5, 0.4, 0.0],
            wind_frequency: [0.5, 0.5, 1.0],
            vertical_amplitude: 0.8,
            vertical_frequency: 2.0,
            yaw_amplitude: 0.05,
            yaw_frequency: 2.5,
            scale: 1.0,
        }
    }
}

impl DisturbanceSpec {
    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let amplitudes = self
            .linear_drag
            .iter()
            .chain(&self.angular_drag)
            .chain(&self.wind_amplitude)
            .chain([&self.vertical_amplitude, &self.yaw_amplitude]);
        if amplitudes.clone().any(|a| !(*a >= 0.0)) {
            return Err(Error::Config("disturbance amplitudes must be non-negative".into()));
        }
        let freqs = self
            .wind_frequency
            .iter()
            .chain([&self.vertical_frequency, &self.yaw_frequency]);
        if freqs.clone().any(|w| !(*w > 0.0)) {
            return Err(Error::Config("disturbance frequencies must be positive".into()));
        }
        if !(self.scale >= 0.0) || !self.scale.is_finite() {
            return Err(Error::Config("DIST_SCALE must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Ground-truth generalized disturbance `(f_trans, f_rot)` at `(x, t)`.
pub fn true_disturbance(x: &State, t: f64, spec: &DisturbanceSpec) -> Vector6<f64> {
    let dv = Vector3::from(spec.linear_drag);
    let dw = Vector3::from(spec.angular_drag);
    let wind = Vector3::new(
        spec.wind_amplitude[0] * (spec.wind_frequency[0] * t).sin(),
        spec.wind_amplitude[1] * (spec.wind_frequency[1] * t).cos(),
        0.0,
    );
    let force = -dv.component_mul(&x.vel)
        + wind
        + spec.vertical_amplitude * (spec.vertical_frequency * t).sin() * e3();
    let moment =
        -dw.component_mul(&x.omega) + spec.yaw_amplitude * (spec.yaw_frequency * t).sin() * e3();
    let mut f = Vector6::zeros();
    f.fixed_rows_mut::<3>(0).copy_from(&(spec.scale * force));
    f.fixed_rows_mut::<3>(3).copy_from(&(spec.scale * moment));
    f
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateDerivative {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    /// Quaternion rate `½ q ⊗ (0, ω)`.
    pub quat: Quaternion<f64>,
    pub omega: Vector3<f64>,
}

impl StateDerivative {
    fn to_vector(self) -> SVector<f64, 13> {
        let mut x = SVector::<f64, 13>::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.pos);
        x.fixed_rows_mut::<3>(3).copy_from(&self.vel);
        x[6] = self.quat.w;
        x[7] = self.quat.i;
        x[8] = self.quat.j;
        x[9] = self.quat.k;
        x.fixed_rows_mut::<3>(10).copy_from(&self.omega);
        x
    }
}

pub fn derivative(
    x: &State,
    u: &ControlInput,
    f: &Vector6<f64>,
    params: &VehicleParams,
) -> StateDerivative {
    let j = params.inertia_matrix();
    let f_trans = f.fixed_rows::<3>(0).into_owned();
    let f_rot = f.fixed_rows::<3>(3).into_owned();
    let accel = params.gravity * e3() + (f_trans - u.thrust * x.rot.thrust_axis()) / params.mass;
    let rhs = -x.omega.cross(&(j * x.omega)) + u.torque + f_rot;
    let omega_dot = j
        .cholesky()
        .map(|c| c.solve(&rhs))
        .unwrap_or_else(|| Vector3::repeat(f64::NAN));
    let q = x.rot.quaternion().quaternion();
    let quat = q * Quaternion::from_imag(x.omega) * 0.5;
    StateDerivative {
        pos: x.vel,
        vel: accel,
        quat,
        omega: omega_dot,
    }
}

/// Advances `x` from `t` to `t + dt` under the held input `u`.
///
/// `step_index` only labels the divergence diagnostic.
pub fn step(
    x: &State,
    u: &ControlInput,
    t: f64,
    dt: f64,
    spec: &DisturbanceSpec,
    params: &VehicleParams,
    step_index: usize,
) -> Result<State> {
    debug_assert!(dt > 0.0);
    let eval = |xs: &SVector<f64, 13>, ts: f64| -> SVector<f64, 13> {
        let state = State::from_vector(xs);
        let f = true_disturbance(&state, ts, spec);
        derivative(&state, u, &f, params).to_vector()
    };
    let x0 = x.to_vector();
    let k1 = eval(&x0, t);
    let k2 = eval(&(x0 + 0.5 * dt * k1), t + 0.5 * dt);
    let k3 = eval(&(x0 + 0.5 * dt * k2), t + 0.5 * dt);
    let k4 = eval(&(x0 + dt * k3), t + dt);
    let x1 = x0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    let next = State::from_vector(&x1);
    if let Some(field) = next.first_non_finite() {
        return Err(Error::Divergence {
            step: step_index,
            time: t + dt,
            field,
        });
    }
    Ok(next)
}

/// Componentwise projection onto `[0, T_max] × [−τ_max, τ_max]³`.
pub fn clamp_input(u: &ControlInput, params: &VehicleParams) -> ControlInput {
    let tm = params.torque_max;
    ControlInput {
        thrust: u.thrust.clamp(0.0, params.thrust_max),
        torque: u.torque.map(|c| c.clamp(-tm, tm)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    fn hover_input(p: &VehicleParams) -> ControlInput {
        ControlInput::new(p.hover_thrust(), Vector3::zeros())
    }

    #[test]
    fn disturbance_at_origin_time_zero() {
        let spec = DisturbanceSpec::default().with_scale(3.0);
        let f = true_disturbance(&State::default(), 0.0, &spec);
        let mut expected = Vector6::zeros();
        expected[1] = 3.0 * spec.wind_amplitude[1];
        assert!((f - expected).norm() < 1e-15);
    }

    #[test]
    fn disturbance_scales_linearly() {
        let x = State {
            vel: Vector3::new(0.3, -1.0, 0.2),
            omega: Vector3::new(0.1, 0.2, -0.4),
            ..State::default()
        };
        let t = 1.234;
        let zero = true_disturbance(&x, t, &DisturbanceSpec::default().with_scale(0.0));
        assert_eq!(zero, Vector6::zeros());
        let one = true_disturbance(&x, t, &DisturbanceSpec::default().with_scale(1.5));
        let two = true_disturbance(&x, t, &DisturbanceSpec::default().with_scale(3.0));
        assert!((two - 2.0 * one).norm() < 1e-14);
    }

    #[test]
    fn hover_is_equilibrium() {
        let p = params();
        let x = State::at_rest(Vector3::new(0.0, 0.0, -1.0));
        let d = derivative(&x, &hover_input(&p), &Vector6::zeros(), &p);
        assert_eq!(d.pos, Vector3::zeros());
        assert!(d.vel.norm() < 1e-15);
        assert_eq!(d.omega, Vector3::zeros());
        let spec = DisturbanceSpec::default().with_scale(0.0);
        let next = step(&x, &hover_input(&p), 0.0, 1e-3, &spec, &p, 0).unwrap();
        let diff = (next.pos - x.pos).norm()
            + (next.vel - x.vel).norm()
            + next.rot.angle_to(&x.rot)
            + (next.omega - x.omega).norm();
        assert!(diff <= 1e-12);
    }

    #[test]
    fn free_response_falls_with_gravity() {
        let p = params();
        let d = derivative(&State::default(), &ControlInput::default(), &Vector6::zeros(), &p);
        assert!((d.vel - p.gravity * e3()).norm() < 1e-15);
    }

    #[test]
    fn axis_aligned_spin_has_no_gyroscopic_term() {
        let p = params();
        let x = State {
            omega: Vector3::z(),
            ..State::default()
        };
        let tau = Vector3::new(0.1, -0.2, 0.3);
        let f = Vector6::new(0.0, 0.0, 0.0, 0.01, 0.02, 0.03);
        let d = derivative(&x, &ControlInput::new(0.0, tau), &f, &p);
        let j = p.inertia_matrix();
        let expected = Vector3::new(0.11 / j[(0, 0)], -0.18 / j[(1, 1)], 0.33 / j[(2, 2)]);
        assert!((d.omega - expected).norm() < 1e-12);
    }

    #[test]
    fn free_fall_matches_analytic_solution() {
        // RK4 integrates constant acceleration exactly.
        let p = params();
        let spec = DisturbanceSpec::default().with_scale(0.0);
        let v0 = Vector3::new(0.5, -0.2, 0.1);
        let p0 = Vector3::new(1.0, 2.0, -3.0);
        for dt in [0.01, 0.005] {
            let mut x = State {
                pos: p0,
                vel: v0,
                ..State::default()
            };
            let n = (1.0 / dt) as usize;
            for k in 0..n {
                x = step(&x, &ControlInput::default(), k as f64 * dt, dt, &spec, &p, k).unwrap();
            }
            let exact = p0 + v0 + 0.5 * p.gravity * e3();
            assert!((x.pos - exact).norm() < 1e-12, "dt = {dt}");
        }
    }

    fn spin_run(dt: f64, horizon: f64, omega0: Vector3<f64>) -> State {
        let p = params();
        let spec = DisturbanceSpec::default().with_scale(0.0);
        let mut x = State {
            omega: omega0,
            ..State::default()
        };
        let n = (horizon / dt).round() as usize;
        for k in 0..n {
            x = step(&x, &ControlInput::default(), k as f64 * dt, dt, &spec, &p, k).unwrap();
        }
        x
    }

    #[test]
    fn torque_free_spin_conserves_body_momentum_norm() {
        let j = params().inertia_matrix();
        for omega0 in [Vector3::new(0.0, 0.0, 3.0), Vector3::new(1.0, 2.0, 0.5)] {
            let x = spin_run(1e-3, 1.0, omega0);
            let before = (j * omega0).norm();
            let after = (j * x.omega).norm();
            assert!((before - after).abs() <= 1e-9, "{omega0:?}: {before} vs {after}");
        }
    }

    #[test]
    fn clamp_cases() {
        let p = VehicleParams {
            torque_max: 2.0,
            ..params()
        };
        let inside = ControlInput::new(5.0, Vector3::new(0.5, -1.0, 1.5));
        assert_eq!(clamp_input(&inside, &p), inside);
        assert_eq!(clamp_input(&ControlInput::new(-1.0, Vector3::zeros()), &p).thrust, 0.0);
        let big = clamp_input(&ControlInput::new(1.0, Vector3::new(10.0, 0.0, 0.0)), &p);
        assert_eq!(big.torque, Vector3::new(2.0, 0.0, 0.0));
        let high = clamp_input(&ControlInput::new(1e3, Vector3::zeros()), &p);
        assert_eq!(high.thrust, p.thrust_max);
    }

    #[test]
    fn divergence_is_reported() {
        let p = params();
        let spec = DisturbanceSpec::default();
        let u = ControlInput::new(f64::NAN, Vector3::zeros());
        let err = step(&State::default(), &u, 0.0, 1e-3, &spec, &p, 17).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 17, .. }));
    }

    #[test]
    fn param_validation() {
        assert!(params().validate().is_ok());
        let mut bad = params();
        bad.inertia[0][1] = 0.5;
        assert!(bad.validate().is_err());
        bad = params();
        bad.mass = 0.0;
        assert!(bad.validate().is_err());
        assert!(DisturbanceSpec::default().validate().is_ok());
        let mut spec = DisturbanceSpec::default();
        spec.vertical_frequency = 0.0;
        assert!(spec.validate().is_err());
    }
}
