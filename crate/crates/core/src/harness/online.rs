use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::controller::Gains;
use crate::error::{Error, Result};
use crate::gp::{build_feature, gate, CompensationFilter, GpModel, Hyperparams, ResidualGp};
use crate::harness::collect::label_at;
use crate::harness::config::ScenarioConfig;
use crate::harness::episode::{eval_stride, simulate, EpisodeResult, Estimate};
use crate::seed::{derive_seed, purpose};

/// Samples between the newest logged state and the labelled one; the
/// smoothed derivative needs two samples on either side.
pub const LABEL_DELAY: usize = 3;

pub struct OnlineOutcome {
    pub episode: EpisodeResult,
    pub residual: ResidualGp,
    pub updates: usize,
    pub update_failures: usize,
}

/// Residual-model hyperparameters: the offline length-scales with the
/// configured prior amplitude and the label-noise level.
pub fn residual_hyperparams(offline: &GpModel, signal_std: f64, noise_std: f64) -> Vec<Hyperparams> {
    offline
        .hyperparams()
        .into_iter()
        .map(|h| Hyperparams {
            signal_std,
            length_scales: h.length_scales,
            noise_std: noise_std.max(1e-3),
        })
        .collect()
}

/// Offline-plus-residual episode. Every `update_interval` the newest
/// available label minus the offline mean is appended to the residual
/// model; the compensation target is `g_off μ_off + g_on μ_res`.
pub fn run_online(cfg: &ScenarioConfig, gains: &Gains, offline: &GpModel) -> Result<OnlineOutcome> {
    let online = &cfg.gp.online;
    let hyps = residual_hyperparams(offline, online.signal_std, cfg.gp.label_noise_std);
    let mut residual = ResidualGp::new(hyps, online.budget)?;
    let stride = eval_stride(cfg);
    let update_stride = ((online.update_interval / cfg.simulation.dt).round() as usize).max(1);
    let noise = Normal::new(0.0, cfg.gp.label_noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.simulation.seed, purpose::ONLINE_NOISE));
    let mut filter = CompensationFilter::new();
    let mut held: Option<Estimate> = None;
    let (mut updates, mut failures) = (0, 0);
    let spec = &cfg.disturbance;

    let episode = simulate(cfg, gains, &mut |c| {
        if c.k % update_stride == 0 && c.k > LABEL_DELAY {
            let j = c.k - LABEL_DELAY;
            if let Some(mut y) = label_at(c.log, &cfg.vehicle, j) {
                if cfg.gp.label_noise_std > 0.0 {
                    for v in y.iter_mut() {
                        *v += noise.sample(&mut rng);
                    }
                }
                let z = build_feature(&c.log.states[j], c.log.time[j], spec);
                let prior = offline.predict_physical(&z).mean;
                match residual.update(z, y - prior) {
                    Ok(()) => updates += 1,
                    Err(_) => failures += 1,
                }
            }
        }
        let z = build_feature(c.state, c.t, spec);
        if c.k % stride == 0 || held.is_none() {
            let rho_off = offline.predict(&z).std.norm();
            let (rho_on, g_on) = if residual.is_empty() {
                (None, 0.0)
            } else {
                let rho = residual.predict(&z).std.norm();
                (Some(rho), gate(rho, &online.gate))
            };
            held = Some(Estimate {
                fhat: nalgebra::Vector6::zeros(),
                gate: Some(gate(rho_off, &cfg.gp.gate)),
                rho: Some(rho_off),
                gate_online: Some(g_on),
                rho_online: rho_on,
            });
        }
        let mut est = held.expect("evaluated above");
        let (g_off, g_on) = (est.gate.unwrap_or(0.0), est.gate_online.unwrap_or(0.0));
        let mu_off = offline.predict_mean(&z) * offline.output_scale(&z);
        let mu_res = if residual.is_empty() {
            nalgebra::Vector6::zeros()
        } else {
            residual.predict_mean(&z)
        };
        let target = cfg.gp.gate.saturate(&(g_off * mu_off + g_on * mu_res));
        if c.k == 0 {
            filter = CompensationFilter::primed(target);
        }
        est.fhat = filter.update(&target, cfg.gp.gate.filter_tau, cfg.simulation.dt);
        Ok(Some(est))
    })?;
    Ok(OnlineOutcome {
        episode,
        residual,
        updates,
        update_failures: failures,
    })
}
