use serde::{Deserialize, Serialize};

use crate::harness::episode::EpisodeResult;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Tracking and input-smoothness summary of one episode. Rates are forward
/// differences of the logged inputs; windows are `[0, t_tr)` and
/// `[t_tr, T)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub controller: String,
    pub dist_scale: f64,
    pub trans_scale: f64,
    pub rot_scale: f64,
    /// ‖e_p(T)‖, m
    pub final_error: f64,
    /// max ‖e_p‖, m
    pub peak_error: f64,
    /// |Ṫ| RMS, N/s
    pub thrust_rate_rms_transient: f64,
    pub thrust_rate_rms_steady: f64,
    /// ‖τ̇‖ RMS, N·m/s
    pub torque_rate_rms_transient: f64,
    pub torque_rate_rms_steady: f64,
    /// |T − mg| RMS, N
    pub thrust_effort_rms_transient: f64,
    pub thrust_effort_rms_steady: f64,
    /// ‖τ‖ RMS, N·m
    pub torque_effort_rms_transient: f64,
    pub torque_effort_rms_steady: f64,
    /// ‖H‖_F
    pub h_frobenius: f64,
    /// Mean feedback aggressiveness s(H, x) over the episode.
    pub aggressiveness_mean: f64,
    pub gate_mean_steady: Option<f64>,
    pub rho_mean_steady: Option<f64>,
    pub gate_online_mean_steady: Option<f64>,
    pub rho_online_mean_steady: Option<f64>,
    pub clamp_count: usize,
    pub singular_count: usize,
    pub steps: usize,
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn metrics(r: &EpisodeResult, transient_end: f64) -> MetricsReport {
    let n = r.len();
    let dt = r.dt;
    let in_tr = |k: usize| r.time[k] < transient_end;
    let rate_idx = 0..n.saturating_sub(1);
    let thrust_rate = |k: usize| (r.inputs[k + 1].thrust - r.inputs[k].thrust) / dt;
    let torque_rate = |k: usize| (r.inputs[k + 1].torque - r.inputs[k].torque).norm() / dt;
    let last = r.time.last().copied().unwrap_or(0.0);
    let in_ss = |k: usize| r.time[k] >= transient_end && r.time[k] < last;
    let window = |pred: &dyn Fn(usize) -> bool, f: &dyn Fn(usize) -> f64, range: std::ops::Range<usize>| {
        rms(range.filter(|k| pred(*k)).map(f))
    };
    let ss_mean = |v: &[Option<f64>]| mean((0..n).filter(|k| in_ss(*k)).filter_map(|k| v[k]));
    let effort_t = |k: usize| r.inputs[k].thrust - r.hover_thrust;
    let effort_r = |k: usize| r.inputs[k].torque.norm();
    MetricsReport {
        schema_version: METRICS_SCHEMA_VERSION,
        controller: String::new(),
        dist_scale: r.dist_scale,
        trans_scale: r.gains.trans_scale,
        rot_scale: r.gains.rot_scale,
        final_error: r.final_position_error(),
        peak_error: r.errors.iter().map(|e| e.pos.norm()).fold(0.0, f64::max),
        thrust_rate_rms_transient: window(&in_tr, &thrust_rate, rate_idx.clone()),
        thrust_rate_rms_steady: window(&in_ss, &thrust_rate, rate_idx.clone()),
        torque_rate_rms_transient: window(&in_tr, &torque_rate, rate_idx.clone()),
        torque_rate_rms_steady: window(&in_ss, &torque_rate, rate_idx),
        thrust_effort_rms_transient: window(&in_tr, &effort_t, 0..n),
        thrust_effort_rms_steady: window(&in_ss, &effort_t, 0..n),
        torque_effort_rms_transient: window(&in_tr, &effort_r, 0..n),
        torque_effort_rms_steady: window(&in_ss, &effort_r, 0..n),
        h_frobenius: r.gains.frobenius_norm(),
        aggressiveness_mean: mean(r.aggressiveness.iter().copied()).unwrap_or(0.0),
        gate_mean_steady: ss_mean(&r.gate),
        rho_mean_steady: ss_mean(&r.rho),
        gate_online_mean_steady: ss_mean(&r.gate_online),
        rho_online_mean_steady: ss_mean(&r.rho_online),
        clamp_count: r.clamp_count(),
        singular_count: r.singular.iter().filter(|s| **s).count(),
        steps: n.saturating_sub(1),
    }
}

impl MetricsReport {
    pub fn with_controller(mut self, name: &str) -> Self {
        self.controller = name.to_string();
        self
    }
}
