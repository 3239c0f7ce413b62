use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use super::{Feature, GpModel};
use crate::error::{Error, Result};

/// Uncertainty gate, saturation and smoothing applied to the raw GP mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    /// Sigmoid center ρ₀.
    pub center: f64,
    /// Sigmoid slope k.
    pub slope: f64,
    /// Per-channel magnitude bound on the compensation (N, N·m).
    pub saturation: [f64; 6],
    /// First-order low-pass time constant, s.
    pub filter_tau: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            center: 0.25,
            slope: 20.0,
            saturation: [5.0, 5.0, 5.0, 0.5, 0.5, 0.5],
            filter_tau: 0.02,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.slope > 0.0
            && self.center.is_finite()
            && self.filter_tau >= 0.0
            && self.saturation.iter().all(|s| *s > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("gate slope and saturation must be positive, filter_tau non-negative".into()))
        }
    }

    pub fn saturate(&self, f: &Vector6<f64>) -> Vector6<f64> {
        Vector6::from_fn(|i, _| f[i].clamp(-self.saturation[i], self.saturation[i]))
    }
}

/// `g(ρ) = 1 / (1 + exp(k (ρ − ρ₀)))`.
pub fn gate(rho: f64, cfg: &GateConfig) -> f64 {
    let x = cfg.slope * (rho - cfg.center);
    // Written to avoid overflow for large |x|.
    if x >= 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

/// First-order low-pass with exact zero-order-hold discretization,
/// `y ← y + (1 − e^{−dt/τ}) (u − y)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CompensationFilter {
    pub output: Vector6<f64>,
}

impl CompensationFilter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts the filter at `output` instead of zero.
    pub fn primed(output: Vector6<f64>) -> Self {
        Self { output }
    }

    pub fn update(&mut self, target: &Vector6<f64>, tau: f64, dt: f64) -> Vector6<f64> {
        let a = if tau <= 0.0 { 1.0 } else { 1.0 - (-dt / tau).exp() };
        self.output += a * (target - self.output);
        self.output
    }
}

/// Gated, saturated compensation target before filtering.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GatedOutput {
    /// `sat(g · μ)` in physical units.
    pub target: Vector6<f64>,
    pub mean: Vector6<f64>,
    pub gate: f64,
    /// Euclidean norm of the predicted standard deviations (model units).
    pub rho: f64,
}

impl GpModel {
    /// Posterior mean rescaled to physical units, multiplied by the gate
    /// value of the uncertainty `ρ = ‖σ‖` and saturated per channel.
    pub fn gated_target(&self, z: &Feature, cfg: &GateConfig) -> GatedOutput {
        let p = self.predict(z);
        let mean = p.mean * self.output_scale(z);
        let rho = p.std.norm();
        let g = gate(rho, cfg);
        GatedOutput {
            target: cfg.saturate(&(g * mean)),
            mean,
            gate: g,
            rho,
        }
    }

    /// Like [`GpModel::gated_target`] with the gate value supplied, so the
    /// variance need not be recomputed.
    pub fn target_with_gate(&self, z: &Feature, g: f64, cfg: &GateConfig) -> Vector6<f64> {
        cfg.saturate(&(g * self.predict_mean(z) * self.output_scale(z)))
    }

    /// One control-rate update of the filtered compensation `f̂`.
    pub fn gated_compensation(
        &self,
        z: &Feature,
        cfg: &GateConfig,
        filter: &mut CompensationFilter,
        dt: f64,
    ) -> (Vector6<f64>, GatedOutput) {
        let out = self.gated_target(z, cfg);
        (filter.update(&out.target, cfg.filter_tau, dt), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sigmoid_center_and_limits() {
        let cfg = GateConfig::default();
        assert!((gate(cfg.center, &cfg) - 0.5).abs() < 1e-15);
        assert!(gate(0.0, &cfg) > 0.99);
        assert!(gate(1e6, &cfg) < 1e-12);
        assert!(gate(-1e6, &cfg) <= 1.0);
    }

    #[test]
    fn filter_step_response_reaches_63_percent_after_tau() {
        let tau: f64 = 0.05;
        let dt: f64 = 1e-3;
        let mut f = CompensationFilter::new();
        let target = Vector6::repeat(2.0);
        let steps = (tau / dt).round() as usize;
        for _ in 0..steps {
            f.update(&target, tau, dt);
        }
        let expected = 2.0 * (1.0 - (-1.0f64).exp());
        assert!((f.output[0] - expected).abs() < 1e-12);
        assert!((f.output[0] / 2.0 - 0.632).abs() < 1e-3);
    }

    #[test]
    fn zero_gate_decays_with_tau() {
        let tau = 0.02;
        let mut f = CompensationFilter {
            output: Vector6::repeat(1.0),
        };
        for _ in 0..20 {
            f.update(&Vector6::zeros(), tau, 1e-3);
        }
        assert!((f.output[3] - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn zero_tau_passes_through() {
        let mut f = CompensationFilter::new();
        let target = Vector6::new(1.0, -2.0, 3.0, 0.1, 0.2, -0.3);
        assert_eq!(f.update(&target, 0.0, 1e-3), target);
    }

    #[test]
    fn saturation_is_per_channel() {
        let cfg = GateConfig::default();
        let s = cfg.saturate(&Vector6::new(10.0, -10.0, 1.0, 2.0, -2.0, 0.1));
        assert_eq!(s, Vector6::new(5.0, -5.0, 1.0, 0.5, -0.5, 0.1));
    }

    proptest! {
        #[test]
        fn gate_in_unit_interval_and_decreasing(a in 0.0..10.0f64, b in 0.0..10.0f64, k in 0.1..100.0f64) {
            let cfg = GateConfig { slope: k, ..GateConfig::default() };
            let (ga, gb) = (gate(a, &cfg), gate(b, &cfg));
            prop_assert!((0.0..=1.0).contains(&ga));
            if a <= b {
                prop_assert!(ga >= gb);
            }
        }
    }
}
