//! Six independent Gaussian-process regressors predicting the generalized
//! disturbance `(f_trans, f_rot)` from a 20-dimensional feature vector.
//!
//! Each output channel `j` uses a squared-exponential ARD kernel
//!
//! ```text
//! k_j(z, z') = σ_f,j² exp(−½ Σ_i (z_i − z'_i)² / ℓ_j,i²) + σ_n,j² δ(z, z')
//! ```
//!
//! with zero prior mean. Posterior mean and variance follow the textbook
//! Cholesky route: `μ = kᵀα` with `α = (K + σ_n² I)⁻¹ y`, and
//! `σ² = k(z, z) − ‖L⁻¹k‖²`.

mod dataset;
mod fit;
mod gate;
mod online;

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, DisturbanceSpec, State, VehicleParams};
use crate::error::{Error, Result};
use crate::se3::e3;

pub use dataset::Dataset;
pub use fit::{log_marginal_likelihood, FitOptions, FitReport, LmlGradient};
pub use gate::{gate, CompensationFilter, GateConfig, GatedOutput};
pub use online::ResidualGp;

/// Dimension of the regression input.
pub const FEATURE_DIM: usize = 20;
/// Number of independent output channels (3 forces, 3 moments).
pub const OUTPUTS: usize = 6;

pub type Feature = SVector<f64, FEATURE_DIM>;

/// Jitter values tried in turn when a Gram factorization fails.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Bounds applied to every ARD length-scale.
pub const LENGTH_SCALE_BOUNDS: (f64, f64) = (1e-2, 1e3);

/// `[p, v, q, ω, sin/cos(ω_z t), sin/cos(ω_ψ t), sin/cos(ω_w,1 t), DIST_SCALE]`.
pub fn build_feature(x: &State, t: f64, spec: &DisturbanceSpec) -> Feature {
    let mut z = Feature::zeros();
    z.fixed_rows_mut::<3>(0).copy_from(&x.pos);
    z.fixed_rows_mut::<3>(3).copy_from(&x.vel);
    for (i, c) in x.rot.wxyz().iter().enumerate() {
        z[6 + i] = *c;
    }
    z.fixed_rows_mut::<3>(10).copy_from(&x.omega);
    let phases = [
        spec.vertical_frequency * t,
        spec.yaw_frequency * t,
        spec.wind_frequency[0] * t,
    ];
    for (i, phase) in phases.iter().enumerate() {
        z[13 + 2 * i] = phase.sin();
        z[14 + 2 * i] = phase.cos();
    }
    z[19] = spec.scale;
    z
}

/// Reads the disturbance scale back out of a feature vector.
pub fn feature_scale(z: &Feature) -> f64 {
    z[FEATURE_DIM - 1]
}

/// Disturbance label obtained by inverting the rigid-body model:
/// `y_trans = m v̇ − m g e3 + T R e3`, `y_rot = J ω̇ + ω × Jω − τ`.
pub fn make_label(
    x: &State,
    vel_dot: &Vector3<f64>,
    omega_dot: &Vector3<f64>,
    u: &ControlInput,
    params: &VehicleParams,
) -> Vector6<f64> {
    let j = params.inertia_matrix();
    let m = params.mass;
    let trans = m * vel_dot - m * params.gravity * e3() + u.thrust * x.rot.thrust_axis();
    let rot = j * omega_dot + x.omega.cross(&(j * x.omega)) - u.torque;
    let mut y = Vector6::zeros();
    y.fixed_rows_mut::<3>(0).copy_from(&trans);
    y.fixed_rows_mut::<3>(3).copy_from(&rot);
    y
}

/// Kernel hyperparameters of one output channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub signal_std: f64,
    pub length_scales: Vec<f64>,
    pub noise_std: f64,
}

impl Hyperparams {
    pub fn isotropic(signal_std: f64, length_scale: f64, noise_std: f64) -> Self {
        Self {
            signal_std,
            length_scales: vec![length_scale; FEATURE_DIM],
            noise_std,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length_scales.len() != FEATURE_DIM {
            return Err(Error::Shape(format!(
                "expected {FEATURE_DIM} length-scales, got {}",
                self.length_scales.len()
            )));
        }
        let (lo, hi) = LENGTH_SCALE_BOUNDS;
        let ok = self.signal_std > 0.0
            && self.noise_std > 0.0
            && self.signal_std.is_finite()
            && self.noise_std.is_finite()
            && self.length_scales.iter().all(|l| (lo..=hi).contains(l));
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "hyperparameters must be positive with length-scales in [{lo}, {hi}]"
            )))
        }
    }

    /// `σ_f² SE-ARD + σ_n² δ`, the human-readable kernel form.
    pub fn kernel_string(&self) -> String {
        format!(
            "({:.3})^2 * SE-ARD(z, z'; l) + ({:.3e}) * delta(z, z')",
            self.signal_std,
            self.noise_std * self.noise_std
        )
    }

    pub(crate) fn scale(&self, z: &Feature) -> Feature {
        let mut s = *z;
        for (c, l) in s.iter_mut().zip(&self.length_scales) {
            *c /= l;
        }
        s
    }
}

/// `σ_f² exp(−½ ‖a − b‖²)` on length-scale-normalized inputs.
#[inline]
pub(crate) fn se_kernel(signal_var: f64, a: &Feature, b: &Feature) -> f64 {
    signal_var * (-0.5 * (a - b).norm_squared()).exp()
}

/// Lower-triangular factor of `K + (σ_n² + jitter) I`, escalating jitter.
pub(crate) fn factorize(
    scaled: &[Feature],
    hyp: &Hyperparams,
    channel: usize,
) -> Result<(DMatrix<f64>, f64)> {
    let n = scaled.len();
    let sv = hyp.signal_std * hyp.signal_std;
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for b in 0..n {
        for a in b..n {
            let k = se_kernel(sv, &scaled[a], &scaled[b]);
            gram[(a, b)] = k;
            gram[(b, a)] = k;
        }
    }
    let noise = hyp.noise_std * hyp.noise_std;
    for jitter in JITTER_LADDER {
        let mut m = gram.clone();
        for i in 0..n {
            m[(i, i)] += noise + jitter;
        }
        if let Some(chol) = m.cholesky() {
            let l = chol.unpack();
            if l.diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                return Ok((l, jitter));
            }
        }
    }
    Err(Error::Factorization {
        channel,
        jitter: *JITTER_LADDER.last().unwrap(),
    })
}

/// Solves `L Lᵀ x = b` in place.
pub(crate) fn cholesky_solve(l: &DMatrix<f64>, b: &mut DVector<f64>) {
    l.solve_lower_triangular_mut(b);
    l.tr_solve_lower_triangular_mut(b);
}

/// One fitted output channel.
#[derive(Clone, Debug)]
pub struct GpChannel {
    pub hyp: Hyperparams,
    scaled: Vec<Feature>,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpChannel {
    fn condition(inputs: &[Feature], targets: &[f64], hyp: Hyperparams, channel: usize) -> Result<Self> {
        hyp.validate()?;
        let scaled: Vec<Feature> = inputs.iter().map(|z| hyp.scale(z)).collect();
        let (chol, jitter) = factorize(&scaled, &hyp, channel)?;
        let mut alpha = DVector::from_column_slice(targets);
        cholesky_solve(&chol, &mut alpha);
        Ok(Self {
            hyp,
            scaled,
            chol,
            alpha,
            jitter,
        })
    }

    /// Jitter that was needed to factorize the Gram matrix.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.alpha
    }

    fn kernel_vector(&self, zs: &Feature) -> DVector<f64> {
        let sv = self.hyp.signal_std * self.hyp.signal_std;
        DVector::from_iterator(self.scaled.len(), self.scaled.iter().map(|x| se_kernel(sv, zs, x)))
    }

    pub fn mean(&self, z: &Feature) -> f64 {
        let zs = self.hyp.scale(z);
        let sv = self.hyp.signal_std * self.hyp.signal_std;
        self.scaled
            .iter()
            .zip(self.alpha.iter())
            .map(|(x, a)| se_kernel(sv, &zs, x) * a)
            .sum()
    }

    /// Posterior mean and standard deviation of the latent function.
    pub fn predict(&self, z: &Feature) -> (f64, f64) {
        let zs = self.hyp.scale(z);
        let mut k = self.kernel_vector(&zs);
        let mu = k.dot(&self.alpha);
        self.chol.solve_lower_triangular_mut(&mut k);
        let var = self.hyp.signal_std * self.hyp.signal_std - k.norm_squared();
        (mu, var.max(0.0).sqrt())
    }

    /// Posterior standard deviations at many points. Solves against
    /// blocks of right-hand sides so the factor is streamed once per block.
    pub fn std_batch(&self, zs: &[Feature]) -> Vec<f64> {
        const BLOCK: usize = 64;
        let n = self.scaled.len();
        let sv = self.hyp.signal_std * self.hyp.signal_std;
        let l = self.chol.as_slice();
        let mut out = Vec::with_capacity(zs.len());
        for chunk in zs.chunks(BLOCK) {
            let b = chunk.len();
            let points: Vec<Feature> = chunk.iter().map(|z| self.hyp.scale(z)).collect();
            // Row i holds k(z_c, x_i) for every point c of the block.
            let mut x: Vec<f64> = self
                .scaled
                .iter()
                .flat_map(|xi| points.iter().map(move |zc| se_kernel(sv, zc, xi)))
                .collect();
            let mut acc = vec![0.0; b];
            for i in 0..n {
                let (head, tail) = x.split_at_mut((i + 1) * b);
                let xi = &mut head[i * b..];
                let d = l[i * n + i];
                for (v, a) in xi.iter_mut().zip(acc.iter_mut()) {
                    *v /= d;
                    *a += *v * *v;
                }
                let col = &l[i * n + i + 1..(i + 1) * n];
                for (lji, xj) in col.iter().zip(tail.chunks_exact_mut(b)) {
                    for (t, v) in xj.iter_mut().zip(xi.iter()) {
                        *t -= lji * v;
                    }
                }
            }
            out.extend(acc.iter().map(|a| (sv - a).max(0.0).sqrt()));
        }
        out
    }
}

/// Six-output GP disturbance oracle.
#[derive(Clone, Debug)]
pub struct GpModel {
    channels: Vec<GpChannel>,
    inputs: Vec<Feature>,
    targets: Vec<Vector6<f64>>,
    normalize_by_dist: bool,
}

/// Posterior at one query point, in model (possibly normalized) units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: Vector6<f64>,
    pub std: Vector6<f64>,
}

impl GpModel {
    /// Conditions six channels on `dataset` with fixed hyperparameters.
    pub fn condition(dataset: &Dataset, hyps: Vec<Hyperparams>) -> Result<Self> {
        dataset.validate()?;
        if hyps.len() != OUTPUTS {
            return Err(Error::Shape(format!("expected {OUTPUTS} hyperparameter sets, got {}", hyps.len())));
        }
        let targets = dataset.model_targets();
        let channels = hyps
            .into_iter()
            .enumerate()
            .map(|(j, hyp)| {
                let column: Vec<f64> = targets.iter().map(|y| y[j]).collect();
                GpChannel::condition(&dataset.features, &column, hyp, j)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            channels,
            inputs: dataset.features.clone(),
            targets,
            normalize_by_dist: dataset.normalize_by_dist,
        })
    }

    /// Optimizes hyperparameters per channel, then conditions on all data.
    pub fn fit(dataset: &Dataset, opts: &FitOptions) -> Result<(Self, FitReport)> {
        let (hyps, report) = fit::optimize_hyperparams(dataset, opts)?;
        Ok((Self::condition(dataset, hyps)?, report))
    }

    pub fn channels(&self) -> &[GpChannel] {
        &self.channels
    }

    pub fn hyperparams(&self) -> Vec<Hyperparams> {
        self.channels.iter().map(|c| c.hyp.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn normalize_by_dist(&self) -> bool {
        self.normalize_by_dist
    }

    pub fn inputs(&self) -> &[Feature] {
        &self.inputs
    }

    /// Training targets in model units.
    pub fn targets(&self) -> &[Vector6<f64>] {
        &self.targets
    }

    /// Posterior mean and standard deviation in model units.
    pub fn predict(&self, z: &Feature) -> Prediction {
        let mut mean = Vector6::zeros();
        let mut std = Vector6::zeros();
        for (j, ch) in self.channels.iter().enumerate() {
            let (m, s) = ch.predict(z);
            mean[j] = m;
            std[j] = s;
        }
        Prediction { mean, std }
    }

    /// Physical-unit standard deviations at many points; agrees with
    /// [`GpModel::predict_physical`].
    pub fn std_physical_batch(&self, zs: &[Feature]) -> Vec<Vector6<f64>> {
        let per_channel: Vec<Vec<f64>> = self.channels.iter().map(|c| c.std_batch(zs)).collect();
        zs.iter()
            .enumerate()
            .map(|(i, z)| Vector6::from_fn(|j, _| per_channel[j][i]) * self.output_scale(z).abs())
            .collect()
    }

    pub fn predict_mean(&self, z: &Feature) -> Vector6<f64> {
        Vector6::from_iterator(self.channels.iter().map(|c| c.mean(z)))
    }

    /// Factor converting model units to N / N·m at `z`.
    pub fn output_scale(&self, z: &Feature) -> f64 {
        if self.normalize_by_dist {
            feature_scale(z)
        } else {
            1.0
        }
    }

    /// Posterior in physical units (targets rescaled by DIST_SCALE when the
    /// model was trained on normalized targets).
    pub fn predict_physical(&self, z: &Feature) -> Prediction {
        let p = self.predict(z);
        let s = self.output_scale(z);
        Prediction {
            mean: p.mean * s,
            std: p.std * s.abs(),
        }
    }

    pub fn snapshot(&self, dataset_path: impl Into<PathBuf>) -> ModelSnapshot {
        ModelSnapshot {
            schema_version: SNAPSHOT_SCHEMA_VERSION,
            dataset: dataset_path.into(),
            normalize_by_dist: self.normalize_by_dist,
            hyperparams: self.hyperparams(),
            kernels: self.channels.iter().map(|c| c.hyp.kernel_string()).collect(),
        }
    }
}

/// `ρ̄ = ‖(β σ_1, …, β σ_6)‖₂` with a uniform confidence multiplier.
pub fn error_bound(std: &Vector6<f64>, beta: f64) -> f64 {
    (beta * std).norm()
}

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

/// JSON model snapshot. Weights are recomputed from the referenced dataset
/// on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub schema_version: u32,
    /// Dataset CSV, relative paths resolved against the snapshot file.
    pub dataset: PathBuf,
    pub normalize_by_dist: bool,
    pub hyperparams: Vec<Hyperparams>,
    /// Informational kernel strings, ignored on load.
    #[serde(default)]
    pub kernels: Vec<String>,
}

impl ModelSnapshot {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// Reads the dataset and refactorizes every channel.
    pub fn restore(&self, snapshot_path: &Path) -> Result<GpModel> {
        let data_path = if self.dataset.is_absolute() {
            self.dataset.clone()
        } else {
            snapshot_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(&self.dataset)
        };
        let mut dataset = Dataset::read_csv(&data_path)?;
        dataset.normalize_by_dist = self.normalize_by_dist;
        GpModel::condition(&dataset, self.hyperparams.clone())
    }
}
