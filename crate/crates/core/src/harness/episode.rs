use nalgebra::Vector6;

use crate::controller::{aggressiveness, Controller, Gains, ReferencePoint};
use crate::dynamics::{step, true_disturbance, ControlInput, State};
use crate::error::Result;
use crate::gp::{build_feature, CompensationFilter, GpModel};
use crate::harness::config::{InitialCondition, ScenarioConfig};
use crate::se3::ErrorVector;

/// Source of the disturbance estimate `f̂` fed to the controller.
#[derive(Clone, Copy, Debug)]
pub enum Oracle<'a> {
    /// Nominal controller.
    None,
    /// The exact disturbance at the start of each step, ungated.
    Truth,
    /// Gated, saturated and filtered posterior mean of an offline model.
    Gp(&'a GpModel),
}

/// Sampled trajectory of one episode; every per-step vector has
/// `steps + 1` entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeResult {
    pub dt: f64,
    pub dist_scale: f64,
    pub gains: Gains,
    pub hover_thrust: f64,
    pub time: Vec<f64>,
    pub states: Vec<State>,
    /// Input applied over `[t_k, t_k + dt)`, after clamping.
    pub inputs: Vec<ControlInput>,
    pub errors: Vec<ErrorVector>,
    pub references: Vec<ReferencePoint>,
    pub fhat: Vec<Vector6<f64>>,
    pub f_true: Vec<Vector6<f64>>,
    pub gate: Vec<Option<f64>>,
    pub rho: Vec<Option<f64>>,
    /// Residual-model gate and uncertainty of online runs.
    pub gate_online: Vec<Option<f64>>,
    pub rho_online: Vec<Option<f64>>,
    pub aggressiveness: Vec<f64>,
    pub clamped: Vec<bool>,
    pub singular: Vec<bool>,
}

impl EpisodeResult {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn final_position_error(&self) -> f64 {
        self.errors.last().map_or(f64::NAN, |e| e.pos.norm())
    }

    pub fn clamp_count(&self) -> usize {
        self.clamped.iter().filter(|c| **c).count()
    }

    /// `max_k ‖f̂_k − f_k‖` in physical units.
    pub fn max_residual(&self) -> f64 {
        self.fhat
            .iter()
            .zip(&self.f_true)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `max_k ‖(0, Δf_t/m, 0, J⁻¹Δf_r)‖`, the residual lifted into the
    /// error coordinates.
    pub fn max_lifted_residual(&self, params: &crate::dynamics::VehicleParams) -> f64 {
        let jinv = params.inertia_matrix().try_inverse().unwrap_or_default();
        self.fhat
            .iter()
            .zip(&self.f_true)
            .map(|(a, b)| {
                let d = b - a;
                let t = d.fixed_rows::<3>(0) / params.mass;
                let r = jinv * d.fixed_rows::<3>(3);
                (t.norm_squared() + r.norm_squared()).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// What a compensator reports for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct Estimate {
    pub fhat: Vector6<f64>,
    pub gate: Option<f64>,
    pub rho: Option<f64>,
    pub gate_online: Option<f64>,
    pub rho_online: Option<f64>,
}

/// Inputs available to a compensator at step `k`; `log` holds steps
/// `0..k` completely.
pub(crate) struct StepContext<'a> {
    pub k: usize,
    pub t: f64,
    pub state: &'a State,
    pub log: &'a EpisodeResult,
}

pub(crate) fn initial_state(cfg: &ScenarioConfig) -> State {
    let r = cfg.reference.at(0.0, cfg.vehicle.gravity);
    let offset = nalgebra::Vector3::from(cfg.simulation.initial_offset);
    match cfg.simulation.initial {
        InitialCondition::Rest => State::at_rest(r.pos + offset),
        InitialCondition::OnReference => State {
            pos: r.pos + offset,
            vel: r.vel,
            rot: r.rot_d,
            omega: r.omega_d,
        },
    }
}

/// The closed-loop episode: reference, errors, optional estimate, control,
/// clamp, RK4 step.
pub(crate) fn simulate(
    cfg: &ScenarioConfig,
    gains: &Gains,
    compensator: &mut dyn FnMut(&StepContext) -> Result<Option<Estimate>>,
) -> Result<EpisodeResult> {
    cfg.validate()?;
    let sim = &cfg.simulation;
    let params = &cfg.vehicle;
    let spec = &cfg.disturbance;
    let n = sim.steps();
    let mut ctrl = Controller::new(gains.clone(), cfg.controller.compensation, params.clone()).with_command_rates(sim.dt);
    let mut log = EpisodeResult {
        dt: sim.dt,
        dist_scale: spec.scale,
        gains: gains.clone(),
        hover_thrust: params.hover_thrust(),
        ..EpisodeResult::default()
    };
    let mut x = initial_state(cfg);
    for k in 0..=n {
        let t = k as f64 * sim.dt;
        let r = cfg.reference.at(t, params.gravity);
        let f_true = true_disturbance(&x, t, spec);
        let est = compensator(&StepContext {
            k,
            t,
            state: &x,
            log: &log,
        })?;
        let out = ctrl.compute(&x, &r, est.as_ref().map(|e| &e.fhat));
        let est = est.unwrap_or_default();
        log.time.push(t);
        log.states.push(x);
        log.inputs.push(out.input);
        log.errors.push(out.error);
        log.references.push(r);
        log.fhat.push(est.fhat);
        log.f_true.push(f_true);
        log.gate.push(est.gate);
        log.rho.push(est.rho);
        log.gate_online.push(est.gate_online);
        log.rho_online.push(est.rho_online);
        log.aggressiveness.push(aggressiveness(gains, &x));
        log.clamped.push(out.clamped);
        log.singular.push(out.singular);
        if k == n {
            break;
        }
        x = step(&x, &out.input, t, sim.dt, spec, params, k)?;
    }
    Ok(log)
}

/// Steps between evaluations of the predictive variance (and hence the
/// gate); the posterior mean is evaluated every step.
pub(crate) fn eval_stride(cfg: &ScenarioConfig) -> usize {
    ((cfg.gp.eval_period / cfg.simulation.dt).round() as usize).max(1)
}

/// Runs one episode with fixed gains and the given oracle.
pub fn run_episode(cfg: &ScenarioConfig, gains: &Gains, oracle: Oracle) -> Result<EpisodeResult> {
    match oracle {
        Oracle::None => simulate(cfg, gains, &mut |_| Ok(None)),
        Oracle::Truth => simulate(cfg, gains, &mut |c| {
            Ok(Some(Estimate {
                fhat: true_disturbance(c.state, c.t, &cfg.disturbance),
                ..Estimate::default()
            }))
        }),
        Oracle::Gp(model) => {
            let stride = eval_stride(cfg);
            let gate_cfg = &cfg.gp.gate;
            let mut filter = CompensationFilter::new();
            let mut held = None;
            simulate(cfg, gains, &mut |c| {
                let z = build_feature(c.state, c.t, &cfg.disturbance);
                let target = if c.k % stride == 0 || held.is_none() {
                    let g = model.gated_target(&z, gate_cfg);
                    held = Some((g.gate, g.rho));
                    g.target
                } else {
                    model.target_with_gate(&z, held.expect("set above").0, gate_cfg)
                };
                let (gate, rho) = held.expect("set above");
                if c.k == 0 {
                    filter = CompensationFilter::primed(target);
                }
                let fhat = filter.update(&target, gate_cfg.filter_tau, cfg.simulation.dt);
                Ok(Some(Estimate {
                    fhat,
                    gate: Some(gate),
                    rho: Some(rho),
                    ..Estimate::default()
                }))
            })
        }
    }
}
