use nalgebra::{Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::dynamics::{ControlInput, VehicleParams};
use crate::error::{Error, Result};
use crate::gp::{build_feature, make_label, Dataset};
use crate::harness::config::{ControllerKind, ScenarioConfig};
use crate::harness::episode::{run_episode, EpisodeResult, Oracle};
use crate::seed::{derive_seed, purpose};

/// Five-point smoothed derivative weights, `(−2, −1, 0, 1, 2) / 10`.
const SG: [f64; 5] = [-0.2, -0.1, 0.0, 0.1, 0.2];
/// Weights of the held inputs `u_{j−2..j+1}` that the smoothed derivative
/// at sample `j` effectively averages over.
const INPUT_WEIGHTS: [f64; 4] = [0.2, 0.3, 0.3, 0.2];
/// Samples lost at each end of an episode.
pub const EDGE_TRIM: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct LabelOptions {
    pub decimation: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub normalize_by_dist: bool,
}

impl LabelOptions {
    pub fn noiseless() -> Self {
        Self {
            decimation: 1,
            noise_std: 0.0,
            seed: 0,
            normalize_by_dist: false,
        }
    }
}

/// Smoothed derivative of `x` at the middle of five equally spaced samples.
pub fn smoothed_derivative(x: &[Vector3<f64>; 5], dt: f64) -> Vector3<f64> {
    x.iter().zip(SG).map(|(v, c)| v * c).sum::<Vector3<f64>>() / dt
}

fn effective_input(inputs: &[ControlInput], j: usize) -> ControlInput {
    let mut u = ControlInput::default();
    for (i, w) in INPUT_WEIGHTS.iter().enumerate() {
        let ui = &inputs[j + i - 2];
        u.thrust += w * ui.thrust;
        u.torque += *w * ui.torque;
    }
    u
}

/// Noiseless label at sample `j` of a logged episode, or `None` within
/// [`EDGE_TRIM`] samples of either end.
pub fn label_at(ep: &EpisodeResult, params: &VehicleParams, j: usize) -> Option<Vector6<f64>> {
    let n = ep.len();
    if j < EDGE_TRIM || j + EDGE_TRIM >= n {
        return None;
    }
    let window = |f: &dyn Fn(usize) -> Vector3<f64>| std::array::from_fn::<_, 5, _>(|i| f(j + i - 2));
    let vdot = smoothed_derivative(&window(&|i| ep.states[i].vel), ep.dt);
    let wdot = smoothed_derivative(&window(&|i| ep.states[i].omega), ep.dt);
    let u = effective_input(&ep.inputs, j);
    Some(make_label(&ep.states[j], &vdot, &wdot, &u, params))
}

/// Training pairs from one logged episode: every `decimation`-th sample
/// away from the edges, with optional Gaussian label noise.
pub fn labels_from_episode(
    ep: &EpisodeResult,
    params: &VehicleParams,
    spec: &crate::dynamics::DisturbanceSpec,
    opts: &LabelOptions,
) -> Result<Dataset> {
    if opts.decimation == 0 {
        return Err(Error::Config("decimation must be positive".into()));
    }
    let noise = Normal::new(0.0, opts.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut data = Dataset {
        noise_std: opts.noise_std,
        normalize_by_dist: opts.normalize_by_dist,
        ..Dataset::default()
    };
    for j in (0..ep.len()).step_by(opts.decimation) {
        let Some(mut y) = label_at(ep, params, j) else { continue };
        if opts.noise_std > 0.0 {
            for c in y.iter_mut() {
                *c += noise.sample(&mut rng);
            }
        }
        data.push(build_feature(&ep.states[j], ep.time[j], spec), y);
    }
    Ok(data)
}

/// Runs one fixed-low episode per configured DIST_SCALE and concatenates
/// their labelled samples in scale order.
pub fn collect_training_data(cfg: &ScenarioConfig) -> Result<Dataset> {
    let gains = cfg.controller.gains_for(ControllerKind::FixedLow, None);
    let noise_seed = derive_seed(cfg.simulation.seed, purpose::LABEL_NOISE);
    let parts = cfg
        .gp
        .collect_scales
        .par_iter()
        .enumerate()
        .map(|(i, &scale)| {
            let scenario = cfg.clone().with_scale(scale);
            let ep = run_episode(&scenario, &gains, Oracle::None)?;
            let opts = LabelOptions {
                decimation: cfg.gp.decimation,
                noise_std: cfg.gp.label_noise_std,
                seed: derive_seed(noise_seed, i as u64),
                normalize_by_dist: cfg.gp.normalize_by_dist,
            };
            let mut d = labels_from_episode(&ep, &scenario.vehicle, &scenario.disturbance, &opts)?;
            d.provenance.push(format!(
                "collect: controller=fixed-low dist_scale={scale} dt={} horizon={} decimation={} label_noise_std={} seed={} rows={}",
                cfg.simulation.dt,
                cfg.simulation.horizon,
                cfg.gp.decimation,
                cfg.gp.label_noise_std,
                cfg.simulation.seed,
                d.len()
            ));
            Ok(d)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut data = Dataset {
        noise_std: cfg.gp.label_noise_std,
        normalize_by_dist: cfg.gp.normalize_by_dist,
        ..Dataset::default()
    };
    for p in parts {
        data.extend(p);
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothed_derivative_is_exact_for_quadratics() {
        let dt = 0.01;
        let f = |t: f64| Vector3::new(3.0 * t * t - t + 2.0, 0.5 * t, -t * t);
        let df = |t: f64| Vector3::new(6.0 * t - 1.0, 0.5, -2.0 * t);
        let t0 = 0.37;
        let samples = std::array::from_fn(|i| f(t0 + (i as f64 - 2.0) * dt));
        assert!((smoothed_derivative(&samples, dt) - df(t0)).norm() < 1e-10);
    }

    #[test]
    fn input_weights_sum_to_one() {
        assert!((INPUT_WEIGHTS.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // 2·(Δ over four steps) + (Δ over two).
        let implied = [0.2, 0.2 + 0.1, 0.2 + 0.1, 0.2];
        for (w, i) in INPUT_WEIGHTS.iter().zip(implied) {
            assert!((w - i).abs() < 1e-12);
        }
    }
}
