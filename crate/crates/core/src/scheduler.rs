//! Aggressiveness-aware gain selection: Lyapunov constants of the nominal
//! closed loop, the sufficient gain condition, tube bounds on the oracle
//! error, the empirical sweep, and block-wise gain floors.

use nalgebra::{DMatrix, DVector, SMatrix, SVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{desired_attitude, CompensationMode, Controller, Gains, ReferencePoint};
use crate::dynamics::{derivative, DisturbanceSpec, State, VehicleParams};
use crate::error::{Error, Result};
use crate::gp::{build_feature, error_bound, GpModel};
use crate::harness::metrics::MetricsReport;
use crate::se3::{e3, Rotation};

pub type Matrix12 = SMatrix<f64, 12, 12>;
pub type Vector12 = SVector<f64, 12>;

/// Perturbation used to linearize the error dynamics.
pub const LINEARIZATION_STEP: f64 = 1e-6;

/// Step used to differentiate the commanded attitude inside the error map.
const COMMAND_STEP: f64 = 1e-4;

/// Step along the flow in [`error_dynamics`].
const FLOW_STEP: f64 = 1e-5;

/// Quadratic Lyapunov function `V = eᵀPe` of the linearized nominal loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCertificate {
    /// Row-major `P`.
    pub p: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub gamma1: f64,
    /// Decay rate `c₁ / (4 λ̄)` implied by `V̇ ≤ −(c₁/2)‖e‖²` and `V ≤ λ̄‖e‖²`.
    pub gamma2: f64,
    /// `c₁ / (4 λ̲)`, which is not a valid rate unless `λ̲ = λ̄`; kept for
    /// comparison only.
    pub gamma2_lower: f64,
    /// Largest real part of the closed-loop spectrum.
    pub max_real_eigenvalue: f64,
    /// `‖AᵀP + PA + Q‖_F`.
    pub residual: f64,
}

impl LyapunovCertificate {
    pub fn p_matrix(&self) -> Matrix12 {
        Matrix12::from_row_slice(&self.p)
    }

    /// `γ₁ e^{−γ₂ t} ‖e₀‖ + ε`.
    pub fn envelope(&self, t: f64, e0: f64, eps: f64) -> f64 {
        self.gamma1 * (-self.gamma2 * t).exp() * e0 + eps
    }

    /// Right-hand side of [`gain_condition`].
    pub fn threshold(&self, eps: f64) -> f64 {
        self.c1 / (2.0 * self.c2) * eps
    }
}

/// Closed loop about a static hover reference at the origin, nominal
/// controller, zero disturbance. `ω_d` is the rate of the commanded
/// attitude along the flow, as in the simulated controller.
struct HoverLoop<'a> {
    gains: &'a Gains,
    params: &'a VehicleParams,
}

impl HoverLoop<'_> {
    fn force(&self, p: &Vector3<f64>, v: &Vector3<f64>) -> Vector3<f64> {
        self.params.mass * self.params.gravity * e3() + self.gains.kp_matrix() * p + self.gains.kv_matrix() * v
    }

    fn attitude(f: &Vector3<f64>) -> Rotation {
        desired_attitude(f, 0.0).unwrap_or_default()
    }

    /// `R_d` and `ω_d` at `(p, v, R)`; the thrust, and hence `v̇`, does not
    /// depend on `ω`.
    fn command(&self, p: &Vector3<f64>, v: &Vector3<f64>, rot: &Rotation) -> (Rotation, Vector3<f64>) {
        let f0 = self.force(p, v);
        let thrust = f0.dot(&rot.thrust_axis());
        let m = self.params.mass;
        let vdot = self.params.gravity * e3() - thrust / m * rot.thrust_axis();
        let fdot = self.gains.kp_matrix() * v + self.gains.kv_matrix() * vdot;
        let h = COMMAND_STEP;
        let rot_d = Self::attitude(&f0);
        let rel = Self::attitude(&(f0 - h * fdot))
            .transpose()
            .compose(&Self::attitude(&(f0 + h * fdot)));
        (rot_d, rel.quaternion().scaled_axis() / (2.0 * h))
    }

    fn state(&self, e: &Vector12) -> State {
        let (ep, ev) = (e.fixed_rows::<3>(0).into_owned(), e.fixed_rows::<3>(3).into_owned());
        let (er, ew) = (e.fixed_rows::<3>(6).into_owned(), e.fixed_rows::<3>(9).into_owned());
        let rot_d = Self::attitude(&self.force(&ep, &ev));
        let s = er.norm();
        let phi = if s > 0.0 { er * (s.min(1.0).asin() / s) } else { er };
        let rot = rot_d.compose(&Rotation::from_rotation_vector(&phi));
        let (rot_d, omega_d) = self.command(&ep, &ev, &rot);
        let omega = ew + rot.transpose().compose(&rot_d).rotate(&omega_d);
        State {
            pos: ep,
            vel: ev,
            rot,
            omega,
        }
    }

    fn error(&self, x: &State) -> Vector12 {
        let (rot_d, omega_d) = self.command(&x.pos, &x.vel, &x.rot);
        crate::se3::stack_error(
            x.pos,
            x.vel,
            crate::se3::attitude_error(&x.rot, &rot_d),
            crate::se3::rate_error(&x.rot, &rot_d, &x.omega, &omega_d),
        )
        .stacked()
    }

    fn flow(&self, x: &State) -> crate::dynamics::StateDerivative {
        let (rot_d, omega_d) = self.command(&x.pos, &x.vel, &x.rot);
        let r = ReferencePoint {
            rot_d,
            omega_d,
            ..ReferencePoint::hover(Vector3::zeros(), 0.0)
        };
        let mut ctrl = Controller::new(self.gains.clone(), CompensationMode::None, self.params.clone());
        let out = ctrl.compute(x, &r, None);
        derivative(x, &out.unclamped, &nalgebra::Vector6::zeros(), self.params)
    }
}

/// Time derivative of the stacked error about a static hover reference at
/// the origin, for the nominal controller and zero disturbance.
///
/// The state is reconstructed from `e`: `p = e_p`, `v = e_v`,
/// `R = R_d exp(hat(φ))` with `sin‖φ‖ φ/‖φ‖ = e_R`,
/// `ω = e_ω + RᵀR_d ω_d`; `ė` is the derivative of the error map along
/// the state flow.
pub fn error_dynamics(e: &Vector12, gains: &Gains, params: &VehicleParams) -> Vector12 {
    let sys = HoverLoop { gains, params };
    let x = sys.state(e);
    let d = sys.flow(&x);
    let h = FLOW_STEP;
    let shifted = |s: f64| retract(&x, &to_local(&d.pos, &d.vel, &x.omega, &d.omega), s);
    (sys.error(&shifted(h)) - sys.error(&shifted(-h))) / (2.0 * h)
}

/// Local coordinates `(δp, δv, δθ, δω)` with `R ← R exp(hat(δθ))`.
fn to_local(p: &Vector3<f64>, v: &Vector3<f64>, th: &Vector3<f64>, w: &Vector3<f64>) -> Vector12 {
    let mut out = Vector12::zeros();
    for (i, part) in [p, v, th, w].iter().enumerate() {
        out.fixed_rows_mut::<3>(3 * i).copy_from(*part);
    }
    out
}

fn retract(x: &State, delta: &Vector12, s: f64) -> State {
    let d = delta * s;
    State {
        pos: x.pos + d.fixed_rows::<3>(0),
        vel: x.vel + d.fixed_rows::<3>(3),
        rot: x.rot.compose(&Rotation::from_rotation_vector(&d.fixed_rows::<3>(6).into_owned())),
        omega: x.omega + d.fixed_rows::<3>(9),
    }
}

/// `A = ∂ė/∂e` at `e = 0`, assembled as `T A_x T⁻¹` from central
/// differences of the state flow (`A_x`, local coordinates) and of the
/// error map (`T`) at hover.
pub fn linearize(gains: &Gains, params: &VehicleParams) -> Matrix12 {
    let sys = HoverLoop { gains, params };
    let hover = State {
        pos: Vector3::zeros(),
        vel: Vector3::zeros(),
        rot: Rotation::identity(),
        omega: Vector3::zeros(),
    };
    let h = LINEARIZATION_STEP;
    let mut ax = Matrix12::zeros();
    let mut t = Matrix12::zeros();
    for i in 0..12 {
        let mut d = Vector12::zeros();
        d[i] = 1.0;
        let (plus, minus) = (retract(&hover, &d, h), retract(&hover, &d, -h));
        let flow = |x: &State| {
            let f = sys.flow(x);
            to_local(&f.pos, &f.vel, &x.omega, &f.omega)
        };
        ax.set_column(i, &((flow(&plus) - flow(&minus)) / (2.0 * h)));
        t.set_column(i, &((sys.error(&plus) - sys.error(&minus)) / (2.0 * h)));
    }
    let t_inv = t.try_inverse().unwrap_or_else(Matrix12::identity);
    t * ax * t_inv
}

/// Solves `AᵀP + PA = −Q` through the `n²`-unknown Kronecker system.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::Shape("Lyapunov solve needs square A and Q of equal size".into()));
    }
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let lhs = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Shape("Lyapunov operator is singular".into()))?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

/// Largest real part among the eigenvalues of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Certificate constants from `A` and `Q = I`.
pub fn certificate_from(a: &DMatrix<f64>) -> Result<LyapunovCertificate> {
    let n = a.nrows();
    let max_real = spectral_abscissa(a);
    if !(max_real < 0.0) {
        return Err(Error::NotStabilizing { max_real });
    }
    let q = DMatrix::<f64>::identity(n, n);
    let p = solve_lyapunov(a, &q)?;
    let residual = (a.transpose() * &p + &p * a + &q).norm();
    let eig = p.clone().symmetric_eigenvalues();
    let lambda_min = eig.min();
    let lambda_max = eig.max();
    let c1 = 1.0;
    Ok(LyapunovCertificate {
        p: p.transpose().as_slice().to_vec(),
        c1,
        c2: 2.0 * lambda_max,
        lambda_min,
        lambda_max,
        gamma1: (lambda_max / lambda_min).sqrt(),
        gamma2: c1 / (4.0 * lambda_max),
        gamma2_lower: c1 / (4.0 * lambda_min),
        max_real_eigenvalue: max_real,
        residual,
    })
}

pub fn lyapunov_constants(gains: &Gains, params: &VehicleParams) -> Result<LyapunovCertificate> {
    let a = linearize(gains, params);
    certificate_from(&DMatrix::from_column_slice(12, 12, a.as_slice()))
}

/// `ρ̄_sup ≤ (c₁ / 2c₂) ε`.
pub fn gain_condition(rho_sup: f64, cert: &LyapunovCertificate, eps: f64) -> bool {
    rho_sup <= cert.threshold(eps)
}

/// A state sampled from the operating envelope together with its time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TubeSample {
    pub state: State,
    pub t: f64,
}

/// Reference states every `spacing` seconds over `[0, horizon]`, each with
/// eight radial perturbations `p + 0.2 d_k`, `v + 0.5 d_k` along
/// `d_k = (cos kπ/4, sin kπ/4, 0)` unless `radial` is false.
pub fn tube_samples(
    reference: impl Fn(f64) -> ReferencePoint,
    horizon: f64,
    spacing: f64,
    radial: bool,
) -> Vec<TubeSample> {
    let count = (horizon / spacing + 1e-9).floor() as usize;
    let mut out = Vec::new();
    for i in 0..=count {
        let t = i as f64 * spacing;
        let r = reference(t);
        let base = State {
            pos: r.pos,
            vel: r.vel,
            rot: r.rot_d,
            omega: r.omega_d,
        };
        out.push(TubeSample { state: base, t });
        if radial {
            for k in 0..8 {
                let a = k as f64 * std::f64::consts::FRAC_PI_4;
                let d = Vector3::new(a.cos(), a.sin(), 0.0);
                let state = State {
                    pos: base.pos + 0.2 * d,
                    vel: base.vel + 0.5 * d,
                    ..base
                };
                out.push(TubeSample { state, t });
            }
        }
    }
    out
}

/// Sup of the oracle error bound over a tube, overall and per block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TubeBound {
    pub total: f64,
    pub translational: f64,
    pub rotational: f64,
}

/// `max ρ̄` over `tube`, in physical units.
pub fn sup_error_bound(model: &GpModel, tube: &[TubeSample], spec: &DisturbanceSpec, beta: f64) -> TubeBound {
    tube.par_chunks(256)
        .flat_map_iter(|chunk| {
            let zs: Vec<_> = chunk.iter().map(|s| build_feature(&s.state, s.t, spec)).collect();
            model.std_physical_batch(&zs)
        })
        .map(|std| {
            let mut t = std;
            t.fixed_rows_mut::<3>(3).fill(0.0);
            let mut r = std;
            r.fixed_rows_mut::<3>(0).fill(0.0);
            TubeBound {
                total: error_bound(&std, beta),
                translational: error_bound(&t, beta),
                rotational: error_bound(&r, beta),
            }
        })
        .reduce(TubeBound::default, |a, b| TubeBound {
            total: a.total.max(b.total),
            translational: a.translational.max(b.translational),
            rotational: a.rotational.max(b.rotational),
        })
}

/// One evaluated grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub trans_scale: f64,
    pub feasible: bool,
    /// `None` when the episode diverged.
    pub metrics: Option<MetricsReport>,
    #[serde(default)]
    pub failure: Option<String>,
}

impl GridRecord {
    pub fn final_error(&self) -> f64 {
        self.metrics.as_ref().map_or(f64::INFINITY, |m| m.final_error)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub schema_version: u32,
    pub eps: f64,
    pub chosen_scale: f64,
    pub feasible: bool,
    pub records: Vec<GridRecord>,
}

pub const SELECTION_SCHEMA_VERSION: u32 = 1;

impl SelectionResult {
    pub fn chosen(&self) -> Option<&GridRecord> {
        self.records.iter().find(|r| r.trans_scale == self.chosen_scale)
    }
}

/// Default sweep grid `1.0, 1.1, …, 2.5`.
pub fn default_grid() -> Vec<f64> {
    (0..16).map(|i| (10 + i) as f64 / 10.0).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepOptions {
    /// Episodes evaluated concurrently; 0 means the rayon default.
    pub jobs: usize,
    /// Stop once a feasible scale is found. The chosen scale is the same,
    /// but later grid points are not evaluated.
    pub stop_at_first_feasible: bool,
}

/// Runs `run(scale)` over an ascending grid and picks the minimal scale
/// whose final error is at most `eps`; if none qualifies, the scale with
/// the smallest final error (ties to the smaller scale).
pub fn sweep_select<F>(grid: &[f64], eps: f64, opts: SweepOptions, run: F) -> Result<SelectionResult>
where
    F: Fn(f64) -> Result<MetricsReport> + Sync,
{
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("sweep grid must be strictly ascending".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let evaluate = |scale: f64| match run(scale) {
        Ok(m) => GridRecord {
            trans_scale: scale,
            feasible: m.final_error <= eps,
            metrics: Some(m),
            failure: None,
        },
        Err(e @ (Error::Divergence { .. } | Error::NotStabilizing { .. })) => GridRecord {
            trans_scale: scale,
            feasible: false,
            metrics: None,
            failure: Some(e.to_string()),
        },
        Err(e) => GridRecord {
            trans_scale: scale,
            feasible: false,
            metrics: None,
            failure: Some(format!("fatal: {e}")),
        },
    };
    let chunk = if opts.stop_at_first_feasible {
        opts.jobs.max(1)
    } else {
        grid.len()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut records: Vec<GridRecord> = Vec::new();
    for part in grid.chunks(chunk) {
        let batch: Vec<GridRecord> = pool.install(|| part.par_iter().map(|s| evaluate(*s)).collect());
        if let Some(fatal) = batch.iter().find_map(|r| r.failure.as_ref().filter(|f| f.starts_with("fatal"))) {
            return Err(Error::Config(fatal.clone()));
        }
        let done = batch.iter().any(|r| r.feasible);
        records.extend(batch);
        if done && opts.stop_at_first_feasible {
            break;
        }
    }
    let (chosen_scale, feasible) = match records.iter().find(|r| r.feasible) {
        Some(r) => (r.trans_scale, true),
        None => {
            let best = records
                .iter()
                .fold(None::<&GridRecord>, |best, r| match best {
                    Some(b) if b.final_error() <= r.final_error() => Some(b),
                    _ => Some(r),
                })
                .expect("grid is non-empty");
            (best.trans_scale, false)
        }
    };
    Ok(SelectionResult {
        schema_version: SELECTION_SCHEMA_VERSION,
        eps,
        chosen_scale,
        feasible,
        records,
    })
}

/// Block-wise gain floors `λ_min = 2√2 c₁ ρ̄_sup / ε`.
pub fn block_gain_floor(rho_t_sup: f64, rho_r_sup: f64, c_t1: f64, c_r1: f64, eps: f64) -> (f64, f64) {
    let k = 2.0 * std::f64::consts::SQRT_2 / eps;
    (k * c_t1 * rho_t_sup, k * c_r1 * rho_r_sup)
}

/// Decay rate of each closed-loop block at one scale: the smallest real
/// part of `−A`'s spectrum restricted to the translational or rotational
/// diagonal block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub scale: f64,
    pub lambda_t: f64,
    pub lambda_r: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub entries: Vec<CalibrationEntry>,
}

impl CalibrationTable {
    /// Evaluates both blocks with `trans_scale = rot_scale = s` for each
    /// `s` in `scales`.
    pub fn build(base: &Gains, params: &VehicleParams, scales: &[f64]) -> Self {
        let entries = scales
            .iter()
            .map(|&s| {
                let a = linearize(&base.with_scales(s, s), params);
                let block = |i: usize| {
                    let b: DMatrix<f64> = DMatrix::from_fn(6, 6, |r, c| a[(i + r, i + c)]);
                    -spectral_abscissa(&b)
                };
                CalibrationEntry {
                    scale: s,
                    lambda_t: block(0),
                    lambda_r: block(6),
                }
            })
            .collect();
        Self { entries }
    }

    /// Smallest tabulated scales whose block rates meet the floors.
    pub fn scales_for(&self, lambda_t_min: f64, lambda_r_min: f64) -> (Option<f64>, Option<f64>) {
        let t = self.entries.iter().find(|e| e.lambda_t >= lambda_t_min).map(|e| e.scale);
        let r = self.entries.iter().find(|e| e.lambda_r >= lambda_r_min).map(|e| e.scale);
        (t, r)
    }
}

/// Fits `‖H‖ ≤ κ₁ ρ + κ₂`: least-squares slope, intercept raised until every
/// calibration point lies on or below the line.
pub fn fit_affine_bound(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let k1 = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
    let k2 = points.iter().map(|p| p.1 - k1 * p.0).fold(f64::NEG_INFINITY, f64::max);
    Some((k1, k2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_lyapunov_closed_form() {
        let a = DMatrix::from_element(1, 1, -2.5);
        let p = solve_lyapunov(&a, &DMatrix::identity(1, 1)).unwrap();
        assert!((p[(0, 0)] - 1.0 / 5.0).abs() < 1e-15);
        let cert = certificate_from(&a).unwrap();
        assert!((cert.c2 - 1.0 / 2.5).abs() < 1e-15);
    }

    #[test]
    fn default_gains_certificate() {
        let cert = lyapunov_constants(&Gains::default(), &VehicleParams::default()).unwrap();
        assert!(cert.residual <= 1e-8, "residual {}", cert.residual);
        assert!(cert.lambda_min > 0.0);
        assert!(cert.gamma1 >= 1.0);
        assert!(cert.max_real_eigenvalue < 0.0);
        let p = cert.p_matrix();
        assert!((p - p.transpose()).norm() < 1e-12);
        assert!((cert.c2 - 2.0 * p.norm().max(0.0)).abs() <= 2.0 * p.norm());
    }

    #[test]
    fn linearization_translational_block() {
        let g = Gains::default();
        let p = VehicleParams::default();
        let a = linearize(&g, &p);
        for i in 0..3 {
            assert!((a[(i, 3 + i)] - 1.0).abs() < 1e-8);
            assert!((a[(3 + i, i)] + 6.0).abs() < 1e-6);
            assert!((a[(3 + i, 3 + i)] + 4.0).abs() < 1e-6);
        }
    }

    #[test]
    fn linearization_agrees_with_error_dynamics() {
        let g = Gains::default();
        let p = VehicleParams::default();
        let a = linearize(&g, &p);
        let h = 1e-3;
        for i in 0..12 {
            let mut e = Vector12::zeros();
            e[i] = h;
            let col = (error_dynamics(&e, &g, &p) - error_dynamics(&(-e), &g, &p)) / (2.0 * h);
            assert!((col - a.column(i)).norm() < 1e-3 * (1.0 + a.column(i).norm()), "column {i}");
        }
        assert!(error_dynamics(&Vector12::zeros(), &g, &p).norm() < 1e-9);
    }

    #[test]
    fn destabilizing_gains_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 1.0, 0.0, -1.0]);
        assert!(matches!(certificate_from(&a), Err(Error::NotStabilizing { .. })));
    }

    #[test]
    fn gain_condition_examples() {
        let cert = LyapunovCertificate {
            p: vec![],
            c1: 1.0,
            c2: 5.0,
            lambda_min: 1.0,
            lambda_max: 2.5,
            gamma1: 1.0,
            gamma2: 1.0,
            gamma2_lower: 1.0,
            max_real_eigenvalue: -1.0,
            residual: 0.0,
        };
        assert!(gain_condition(0.0, &cert, 1e-9));
        assert!((cert.threshold(0.1) - 0.01).abs() < 1e-15);
        assert!(!gain_condition(0.02, &cert, 0.1));
        assert!(gain_condition(cert.threshold(0.1), &cert, 0.1));
    }

    #[test]
    fn block_floor_examples() {
        assert_eq!(block_gain_floor(0.0, 0.0, 1.0, 1.0, 0.1), (0.0, 0.0));
        let (t, _) = block_gain_floor(0.1, 0.0, 1.0, 1.0, 0.1);
        assert!((t - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        let (a, b) = block_gain_floor(0.3, 0.2, 1.0, 2.0, 0.1);
        let (c, d) = block_gain_floor(0.3, 0.2, 1.0, 2.0, 0.05);
        assert!((c - 2.0 * a).abs() < 1e-12 && (d - 2.0 * b).abs() < 1e-12);
    }

    #[test]
    fn calibration_table_matches_characteristic_roots() {
        let table = CalibrationTable::build(&Gains::default(), &VehicleParams::default(), &[1.0, 1.5]);
        // s² + 4 s + 6: real part 2. s² + 6 s + 9: double root at 3.
        assert!((table.entries[0].lambda_t - 2.0).abs() < 1e-5);
        assert!((table.entries[1].lambda_t - 3.0).abs() < 1e-3);
        assert_eq!(table.scales_for(2.5, 0.0).0, Some(1.5));
        assert_eq!(table.scales_for(100.0, 0.0).0, None);
    }

    fn fake_metrics(final_error: f64) -> MetricsReport {
        MetricsReport {
            final_error,
            ..MetricsReport::default()
        }
    }

    #[test]
    fn sweep_picks_minimal_feasible_scale() {
        let grid = default_grid();
        let run = |s: f64| Ok(fake_metrics(0.3 / s));
        let r = sweep_select(&grid, 0.2, SweepOptions::default(), run).unwrap();
        assert!(r.feasible);
        assert_eq!(r.chosen_scale, 1.5);
        let early = sweep_select(
            &grid,
            0.2,
            SweepOptions {
                jobs: 1,
                stop_at_first_feasible: true,
            },
            run,
        )
        .unwrap();
        assert_eq!(early.chosen_scale, 1.5);
        assert_eq!(early.records.len(), 6);
        let all = sweep_select(&grid, f64::INFINITY, SweepOptions::default(), run).unwrap();
        assert_eq!(all.chosen_scale, 1.0);
    }

    #[test]
    fn infeasible_sweep_returns_best_with_smaller_tie() {
        let grid = [1.0, 1.5, 2.0, 2.5];
        let run = |s: f64| Ok(fake_metrics(if s >= 2.0 { 0.5 } else { 1.0 / s }));
        let r = sweep_select(&grid, 0.1, SweepOptions::default(), run).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.chosen_scale, 2.0);
    }

    #[test]
    fn divergent_point_is_infeasible() {
        let grid = [1.0, 2.0];
        let run = |s: f64| {
            if s < 1.5 {
                Err(Error::Divergence {
                    step: 3,
                    time: 0.003,
                    field: "position",
                })
            } else {
                Ok(fake_metrics(0.01))
            }
        };
        let r = sweep_select(&grid, 0.1, SweepOptions::default(), run).unwrap();
        assert_eq!(r.chosen_scale, 2.0);
        assert!(r.records[0].metrics.is_none());
        assert!(r.records[0].failure.as_ref().unwrap().contains("diverged"));
    }

    #[test]
    fn affine_bound_covers_points() {
        let pts = [(0.0, 1.0), (1.0, 2.5), (2.0, 2.9), (3.0, 4.2)];
        let (k1, k2) = fit_affine_bound(&pts).unwrap();
        assert!(k1 > 0.0);
        assert!(pts.iter().all(|(x, y)| *y <= k1 * x + k2 + 1e-12));
    }
}
