//! Type-II maximum likelihood for the per-channel hyperparameters.
//!
//! The log marginal likelihood
//!
//! ```text
//! log p(y) = −½ yᵀα − Σ log L_ii − (n/2) log 2π
//! ```
//!
//! is maximized in log-parameter space with a bound-projected L-BFGS
//! ascent. Every accepted step satisfies an Armijo condition, so the
//! recorded trace never decreases.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Feature, Hyperparams, FEATURE_DIM, JITTER_LADDER, LENGTH_SCALE_BOUNDS, OUTPUTS};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, purpose};

const N_PARAMS: usize = FEATURE_DIM + 2;
const LBFGS_MEMORY: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub restarts: usize,
    pub iterations: usize,
    /// Hyperparameters are optimized on at most this many evenly spread
    /// rows; the final model is conditioned on the full dataset.
    pub subset: Option<usize>,
    /// Master seed; set from the scenario, not read from config files.
    #[serde(skip)]
    pub seed: u64,
    pub signal_bounds: (f64, f64),
    pub noise_bounds: (f64, f64),
    /// Stop once the projected gradient falls below this (∞-norm).
    pub gradient_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 4,
            iterations: 200,
            subset: Some(300),
            seed: 0,
            signal_bounds: (1e-3, 1e3),
            noise_bounds: (1e-4, 1e1),
            gradient_tolerance: 1e-5,
        }
    }
}

/// Value and gradient of the log marginal likelihood with respect to
/// `[log σ_f, log ℓ_1..ℓ_20, log σ_n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LmlGradient {
    pub value: f64,
    pub gradient: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub channel: usize,
    pub log_likelihood: f64,
    pub kernel: String,
    /// Final value reached by every restart.
    pub restart_values: Vec<f64>,
    /// Accepted iterates of the winning restart.
    pub trace: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub rows_used: usize,
    pub channels: Vec<ChannelReport>,
}

/// Pairwise squared coordinate differences, shared by all evaluations.
struct Problem {
    n: usize,
    sq: Vec<DMatrix<f64>>,
    y: DVector<f64>,
}

impl Problem {
    fn new(inputs: &[Feature], targets: &[f64]) -> Self {
        let n = inputs.len();
        let sq = (0..FEATURE_DIM)
            .map(|d| DMatrix::from_fn(n, n, |a, b| (inputs[a][d] - inputs[b][d]).powi(2)))
            .collect();
        Self {
            n,
            sq,
            y: DVector::from_column_slice(targets),
        }
    }

    fn signal_gram(&self, theta: &[f64]) -> DMatrix<f64> {
        let sv = (2.0 * theta[0]).exp();
        let inv_l2: Vec<f64> = (0..FEATURE_DIM).map(|d| (-2.0 * theta[1 + d]).exp()).collect();
        let mut exponent = DMatrix::<f64>::zeros(self.n, self.n);
        for (sq, w) in self.sq.iter().zip(&inv_l2) {
            exponent.zip_apply(sq, |e, s| *e += w * s);
        }
        exponent.map(|e| sv * (-0.5 * e).exp())
    }

    fn factor(&self, kf: &DMatrix<f64>, theta: &[f64]) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let noise = (2.0 * theta[N_PARAMS - 1]).exp();
        JITTER_LADDER.iter().find_map(|jitter| {
            let mut k = kf.clone();
            for i in 0..self.n {
                k[(i, i)] += noise + jitter;
            }
            k.cholesky()
        })
    }

    fn value_from(&self, chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> (f64, DVector<f64>) {
        let alpha = chol.solve(&self.y);
        let log_det: f64 = chol.l_dirty().diagonal().iter().take(self.n).map(|d| d.ln()).sum();
        let value = -0.5 * self.y.dot(&alpha)
            - log_det
            - 0.5 * self.n as f64 * (2.0 * std::f64::consts::PI).ln();
        (value, alpha)
    }

    fn value(&self, theta: &[f64]) -> Option<f64> {
        let kf = self.signal_gram(theta);
        let chol = self.factor(&kf, theta)?;
        Some(self.value_from(&chol).0).filter(|v| v.is_finite())
    }

    fn value_and_gradient(&self, theta: &[f64]) -> Option<LmlGradient> {
        let kf = self.signal_gram(theta);
        let chol = self.factor(&kf, theta)?;
        let (value, alpha) = self.value_from(&chol);
        if !value.is_finite() {
            return None;
        }
        // W = ααᵀ − K⁻¹; dL/dθ = ½ tr(W ∂K/∂θ).
        let mut w = -chol.inverse();
        w.ger(1.0, &alpha, &alpha, 1.0);
        let m = w.component_mul(&kf);
        let mut gradient = vec![0.0; N_PARAMS];
        gradient[0] = m.sum();
        for d in 0..FEATURE_DIM {
            let inv_l2 = (-2.0 * theta[1 + d]).exp();
            gradient[1 + d] = 0.5 * inv_l2 * m.dot(&self.sq[d]);
        }
        let noise = (2.0 * theta[N_PARAMS - 1]).exp();
        gradient[N_PARAMS - 1] = noise * w.trace();
        Some(LmlGradient { value, gradient })
    }
}

fn to_theta(h: &Hyperparams) -> Vec<f64> {
    let mut theta = Vec::with_capacity(N_PARAMS);
    theta.push(h.signal_std.ln());
    theta.extend(h.length_scales.iter().map(|l| l.ln()));
    theta.push(h.noise_std.ln());
    theta
}

fn from_theta(theta: &[f64]) -> Hyperparams {
    Hyperparams {
        signal_std: theta[0].exp(),
        length_scales: theta[1..=FEATURE_DIM].iter().map(|t| t.exp()).collect(),
        noise_std: theta[N_PARAMS - 1].exp(),
    }
}

/// Log marginal likelihood of one channel and its analytic gradient with
/// respect to the log-hyperparameters.
pub fn log_marginal_likelihood(inputs: &[Feature], targets: &[f64], hyp: &Hyperparams) -> Result<LmlGradient> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::Shape("inputs and targets must be non-empty and equally long".into()));
    }
    Problem::new(inputs, targets)
        .value_and_gradient(&to_theta(hyp))
        .ok_or(Error::Factorization {
            channel: 0,
            jitter: *JITTER_LADDER.last().unwrap(),
        })
}

struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    fn new(opts: &FitOptions) -> Self {
        let (llo, lhi) = LENGTH_SCALE_BOUNDS;
        let mut lo = vec![llo.ln(); N_PARAMS];
        let mut hi = vec![lhi.ln(); N_PARAMS];
        lo[0] = opts.signal_bounds.0.ln();
        hi[0] = opts.signal_bounds.1.ln();
        lo[N_PARAMS - 1] = opts.noise_bounds.0.ln();
        hi[N_PARAMS - 1] = opts.noise_bounds.1.ln();
        Self { lo, hi }
    }

    fn clip(&self, theta: &mut [f64]) {
        for ((t, lo), hi) in theta.iter_mut().zip(&self.lo).zip(&self.hi) {
            *t = t.clamp(*lo, *hi);
        }
    }

    /// Zeroes components that would push past an active bound.
    fn project(&self, theta: &[f64], v: &mut [f64]) {
        for i in 0..v.len() {
            let at_lo = theta[i] <= self.lo[i] + 1e-12 && v[i] < 0.0;
            let at_hi = theta[i] >= self.hi[i] - 1e-12 && v[i] > 0.0;
            if at_lo || at_hi {
                v[i] = 0.0;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-loop recursion for the ascent direction `H g` (curvature pairs
/// stored for the minimization of `−L`).
fn lbfgs_direction(g: &[f64], history: &[(Vec<f64>, Vec<f64>)]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y) in history.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push((rho, a));
    }
    if let Some((s, y)) = history.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y), (rho, a)) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q
}

struct AscentResult {
    theta: Vec<f64>,
    value: f64,
    trace: Vec<f64>,
}

fn ascend(problem: &Problem, start: Vec<f64>, bounds: &Bounds, opts: &FitOptions) -> Option<AscentResult> {
    let mut theta = start;
    bounds.clip(&mut theta);
    let mut cur = problem.value_and_gradient(&theta)?;
    let mut trace = vec![cur.value];
    let mut history: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut stalled = 0;
    for _ in 0..opts.iterations {
        let mut pg = cur.gradient.clone();
        bounds.project(&theta, &mut pg);
        let gnorm = pg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm < opts.gradient_tolerance {
            break;
        }
        let mut dir = lbfgs_direction(&pg, &history);
        bounds.project(&theta, &mut dir);
        let mut step = 1.0;
        if history.is_empty() || dot(&dir, &pg) <= 0.0 {
            history.clear();
            dir = pg.clone();
            step = (1.0 / gnorm).min(1.0);
        }
        let mut accepted = None;
        for _ in 0..40 {
            let mut cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
            bounds.clip(&mut cand);
            let moved: Vec<f64> = cand.iter().zip(&theta).map(|(c, t)| c - t).collect();
            let predicted = dot(&pg, &moved);
            if predicted <= 0.0 {
                break;
            }
            if let Some(v) = problem.value(&cand) {
                if v >= cur.value + 1e-4 * predicted {
                    accepted = Some((cand, moved));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((cand, s)) = accepted else { break };
        let Some(next) = problem.value_and_gradient(&cand) else { break };
        let yv: Vec<f64> = cur
            .gradient
            .iter()
            .zip(&next.gradient)
            .map(|(g0, g1)| g0 - g1)
            .collect();
        if dot(&s, &yv) > 1e-12 {
            history.push((s, yv));
            if history.len() > LBFGS_MEMORY {
                history.remove(0);
            }
        }
        let gain = next.value - cur.value;
        stalled = if gain < 1e-10 * (1.0 + cur.value.abs()) { stalled + 1 } else { 0 };
        theta = cand;
        cur = next;
        trace.push(cur.value);
        if stalled >= 5 {
            break;
        }
    }
    Some(AscentResult {
        theta,
        value: cur.value,
        trace,
    })
}

fn column_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn initial_theta(inputs: &[Feature], targets: &[f64]) -> Vec<f64> {
    let mut theta = Vec::with_capacity(N_PARAMS);
    let sf = column_std(targets.iter().copied()).max(1e-2);
    theta.push(sf.ln());
    for d in 0..FEATURE_DIM {
        let s = column_std(inputs.iter().map(|z| z[d]));
        let l = if s > 1e-9 { s } else { 10.0 };
        theta.push(l.ln());
    }
    theta.push((0.1 * sf).max(1e-3).ln());
    theta
}

fn fit_channel(
    channel: usize,
    inputs: &[Feature],
    targets: &[f64],
    opts: &FitOptions,
) -> Result<(Hyperparams, ChannelReport)> {
    let problem = Problem::new(inputs, targets);
    let bounds = Bounds::new(opts);
    let base = initial_theta(inputs, targets);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(opts.seed, purpose::GP_RESTARTS), channel as u64));
    let mut best: Option<AscentResult> = None;
    let mut restart_values = Vec::new();
    for r in 0..opts.restarts.max(1) {
        let mut start = base.clone();
        if r > 0 {
            start[0] += rng.gen_range(-1.0..1.0);
            for t in &mut start[1..=FEATURE_DIM] {
                *t += rng.gen_range(-1.5..1.5);
            }
            start[N_PARAMS - 1] = start[0] + rng.gen_range((1e-3f64).ln()..(0.3f64).ln());
        }
        let Some(result) = ascend(&problem, start, &bounds, opts) else {
            restart_values.push(f64::NEG_INFINITY);
            continue;
        };
        restart_values.push(result.value);
        if best.as_ref().map_or(true, |b| result.value > b.value) {
            best = Some(result);
        }
    }
    let best = best.ok_or(Error::Factorization {
        channel,
        jitter: *JITTER_LADDER.last().unwrap(),
    })?;
    let hyp = from_theta(&best.theta);
    let report = ChannelReport {
        channel,
        log_likelihood: best.value,
        kernel: hyp.kernel_string(),
        restart_values,
        trace: best.trace,
    };
    Ok((hyp, report))
}

/// Multi-start optimization of all six channels; channels run in parallel.
pub(crate) fn optimize_hyperparams(dataset: &Dataset, opts: &FitOptions) -> Result<(Vec<Hyperparams>, FitReport)> {
    dataset.validate()?;
    let sub = match opts.subset {
        Some(n) => dataset.spread_subset(n.max(1)),
        None => dataset.clone(),
    };
    let targets = sub.model_targets();
    let results = (0..OUTPUTS)
        .into_par_iter()
        .map(|j| {
            let column: Vec<f64> = targets.iter().map(|y| y[j]).collect();
            fit_channel(j, &sub.features, &column, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let (hyps, channels): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok((
        hyps,
        FitReport {
            rows_used: sub.len(),
            channels,
        },
    ))
}
