use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::{CompensationMode, Gains};
use crate::dynamics::{DisturbanceSpec, VehicleParams};
use crate::error::{Error, Result};
use crate::gp::{FitOptions, GateConfig};
use crate::harness::reference::FigureEight;

/// Controller strategy of an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    FixedLow,
    FixedHigh,
    Aware,
    GpCompAware,
    GpCompOnline,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 5] = [
        ControllerKind::FixedLow,
        ControllerKind::FixedHigh,
        ControllerKind::Aware,
        ControllerKind::GpCompAware,
        ControllerKind::GpCompOnline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::FixedLow => "fixed-low",
            ControllerKind::FixedHigh => "fixed-high",
            ControllerKind::Aware => "aware",
            ControllerKind::GpCompAware => "gp-comp-aware",
            ControllerKind::GpCompOnline => "gp-comp-online",
        }
    }

    pub fn uses_gp(self) -> bool {
        matches!(self, ControllerKind::GpCompAware | ControllerKind::GpCompOnline)
    }

    /// Whether the translational scale comes from the sweep scheduler.
    pub fn is_scheduled(self) -> bool {
        !matches!(self, ControllerKind::FixedLow | ControllerKind::FixedHigh)
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown controller `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    /// Base gains; scales below multiply them.
    pub gains: Gains,
    pub low_scale: f64,
    pub high_scale: f64,
    /// Translational scale used by scheduled strategies when no sweep is run.
    pub trans_scale: f64,
    pub rot_scale: f64,
    pub compensation: CompensationMode,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kind: ControllerKind::FixedLow,
            gains: Gains::default(),
            low_scale: 1.0,
            high_scale: 1.8,
            trans_scale: 1.0,
            rot_scale: 1.0,
            compensation: CompensationMode::ForceAug,
        }
    }
}

impl ControllerConfig {
    /// Gains for `kind`, with `scheduled` overriding the translational scale
    /// of scheduled strategies.
    pub fn gains_for(&self, kind: ControllerKind, scheduled: Option<f64>) -> Gains {
        let ts = match kind {
            ControllerKind::FixedLow => self.low_scale,
            ControllerKind::FixedHigh => self.high_scale,
            _ => scheduled.unwrap_or(self.trans_scale),
        };
        self.gains.with_scales(ts, self.rot_scale)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineConfig {
    /// Seconds between residual updates.
    pub update_interval: f64,
    pub budget: usize,
    /// Prior standard deviation of the residual GP.
    pub signal_std: f64,
    pub gate: GateConfig,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            update_interval: 0.05,
            budget: 350,
            signal_std: 0.2,
            gate: GateConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpConfig {
    /// Dataset CSV written by `collect` and read by `fit`.
    pub dataset: PathBuf,
    /// Model snapshot written by `fit` and read by GP strategies.
    pub model: PathBuf,
    pub normalize_by_dist: bool,
    pub label_noise_std: f64,
    /// One training row every this many control steps.
    pub decimation: usize,
    /// DIST_SCALE values of the collection episodes.
    pub collect_scales: Vec<f64>,
    pub fit: FitOptions,
    pub gate: GateConfig,
    /// Confidence multiplier β of the error bound.
    pub beta: f64,
    /// Seconds between oracle evaluations; the output is held in between.
    pub eval_period: f64,
    pub online: OnlineConfig,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("dataset.csv"),
            model: PathBuf::from("model.json"),
            normalize_by_dist: true,
            label_noise_std: 0.01,
            decimation: 25,
            collect_scales: vec![1.0, 3.0],
            fit: FitOptions::default(),
            gate: GateConfig::default(),
            beta: 2.0,
            eval_period: 0.01,
            online: OnlineConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    /// Tracking tolerance ε, m.
    pub eps: f64,
    pub grid: Vec<f64>,
    /// Block constants of the gain-floor rule.
    pub c_t1: f64,
    pub c_r1: f64,
    /// Spacing of tube samples along the reference, s.
    pub tube_spacing: f64,
    /// Exit non-zero when a sweep finds no feasible scale.
    pub strict: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            grid: crate::scheduler::default_grid(),
            c_t1: 1.0,
            c_r1: 1.0,
            tube_spacing: 0.05,
            strict: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialCondition {
    /// At rest, level, at `p_d(0)`.
    Rest,
    /// On the reference: `p_d(0)`, `ṗ_d(0)`, `R_d(0)`, `ω_d(0)`.
    OnReference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub initial: InitialCondition,
    /// Added to the initial position, m.
    pub initial_offset: [f64; 3],
    /// End of the transient window; the steady window runs to the horizon.
    pub transient_end: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 20.0,
            seed: 0,
            initial: InitialCondition::Rest,
            initial_offset: [0.0; 3],
            transient_end: 3.0,
        }
    }
}

impl SimulationConfig {
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write the per-step CSV of each simulated episode.
    pub write_steps: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            write_steps: true,
        }
    }
}

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// A complete scenario. Every section has defaults, so `{}` is valid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub vehicle: VehicleParams,
    pub disturbance: DisturbanceSpec,
    pub reference: FigureEight,
    pub controller: ControllerConfig,
    pub gp: GpConfig,
    pub scheduler: SchedulerConfig,
    pub simulation: SimulationConfig,
    pub output: OutputConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            vehicle: VehicleParams::default(),
            disturbance: DisturbanceSpec::default(),
            reference: FigureEight::default(),
            controller: ControllerConfig::default(),
            gp: GpConfig::default(),
            scheduler: SchedulerConfig::default(),
            simulation: SimulationConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// The shipped `default.json`.
pub const DEFAULT_CONFIG_JSON: &str = include_str!("../../configs/default.json");

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.disturbance.scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.vehicle.validate()?;
        self.disturbance.validate()?;
        self.reference.validate()?;
        self.controller.gains.validate()?;
        let c = &self.controller;
        if [c.low_scale, c.high_scale, c.trans_scale, c.rot_scale].iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("controller scales must be positive".into()));
        }
        let s = &self.simulation;
        if !(s.dt > 0.0) || !(s.horizon > 0.0) || !s.horizon.is_finite() {
            return Err(Error::Config("simulation dt and horizon must be positive".into()));
        }
        if !(s.transient_end >= 0.0) {
            return Err(Error::Config("transient_end must be non-negative".into()));
        }
        if !(self.scheduler.eps > 0.0) {
            return Err(Error::Config("scheduler.eps must be positive".into()));
        }
        if self.scheduler.grid.is_empty() || self.scheduler.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("scheduler.grid must be non-empty and strictly ascending".into()));
        }
        if !(self.scheduler.tube_spacing > 0.0) {
            return Err(Error::Config("scheduler.tube_spacing must be positive".into()));
        }
        let g = &self.gp;
        g.gate.validate()?;
        g.online.gate.validate()?;
        if g.decimation == 0 || !(g.eval_period > 0.0) || !(g.label_noise_std >= 0.0) || !(g.beta > 0.0) {
            return Err(Error::Config(
                "gp.decimation and gp.eval_period must be positive, label noise non-negative, beta positive".into(),
            ));
        }
        if g.collect_scales.is_empty() {
            return Err(Error::Config("gp.collect_scales must not be empty".into()));
        }
        if g.online.budget == 0 || !(g.online.update_interval > 0.0) || !(g.online.signal_std > 0.0) {
            return Err(Error::Config("gp.online budget, interval and signal_std must be positive".into()));
        }
        Ok(())
    }

    /// Resolves a configured path against `base` when it is relative.
    pub fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}
