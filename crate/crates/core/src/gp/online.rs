use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Vector6};

use super::{cholesky_solve, se_kernel, Feature, Hyperparams, Prediction, JITTER_LADDER, OUTPUTS};
use crate::error::{Error, Result};

/// Streaming residual GP with frozen hyperparameters and a FIFO point
/// budget. Points are appended with a rank-one extension of each
/// channel's Cholesky factor; evicting the oldest point is a rank-one
/// update of the trailing block.
#[derive(Clone, Debug)]
pub struct ResidualGp {
    hyps: Vec<Hyperparams>,
    budget: usize,
    points: VecDeque<Feature>,
    targets: VecDeque<Vector6<f64>>,
    channels: Vec<Channel>,
}

#[derive(Clone, Debug)]
struct Channel {
    scaled: Vec<Feature>,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
}

impl ResidualGp {
    pub fn new(hyps: Vec<Hyperparams>, budget: usize) -> Result<Self> {
        if hyps.len() != OUTPUTS {
            return Err(Error::Shape(format!("expected {OUTPUTS} hyperparameter sets, got {}", hyps.len())));
        }
        if budget == 0 {
            return Err(Error::Config("residual point budget must be positive".into()));
        }
        for h in &hyps {
            h.validate()?;
        }
        let channels = (0..OUTPUTS)
            .map(|_| Channel {
                scaled: Vec::new(),
                chol: DMatrix::zeros(0, 0),
                alpha: DVector::zeros(0),
            })
            .collect();
        Ok(Self {
            hyps,
            budget,
            points: VecDeque::new(),
            targets: VecDeque::new(),
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn hyperparams(&self) -> &[Hyperparams] {
        &self.hyps
    }

    pub fn points(&self) -> impl Iterator<Item = (&Feature, &Vector6<f64>)> {
        self.points.iter().zip(&self.targets)
    }

    /// Adds one residual observation, evicting the oldest point when the
    /// budget is exceeded.
    pub fn update(&mut self, z: Feature, y: Vector6<f64>) -> Result<()> {
        if !z.iter().chain(y.iter()).all(|c| c.is_finite()) {
            return Err(Error::Shape("residual observation contains non-finite entries".into()));
        }
        for (hyp, ch) in self.hyps.iter().zip(&mut self.channels) {
            ch.append(hyp, hyp.scale(&z));
        }
        self.points.push_back(z);
        self.targets.push_back(y);
        if self.points.len() > self.budget {
            self.points.pop_front();
            self.targets.pop_front();
            for ch in &mut self.channels {
                ch.remove_first();
            }
        }
        self.refresh_weights();
        Ok(())
    }

    fn refresh_weights(&mut self) {
        for (j, ch) in self.channels.iter_mut().enumerate() {
            let mut alpha = DVector::from_iterator(self.targets.len(), self.targets.iter().map(|y| y[j]));
            cholesky_solve(&ch.chol, &mut alpha);
            ch.alpha = alpha;
        }
    }

    pub fn predict_mean(&self, z: &Feature) -> Vector6<f64> {
        Vector6::from_iterator(self.hyps.iter().zip(&self.channels).map(|(hyp, ch)| {
            let sv = hyp.signal_std * hyp.signal_std;
            let zs = hyp.scale(z);
            ch.scaled.iter().zip(ch.alpha.iter()).map(|(x, a)| a * se_kernel(sv, &zs, x)).sum::<f64>()
        }))
    }

    pub fn predict(&self, z: &Feature) -> Prediction {
        let mut mean = Vector6::zeros();
        let mut std = Vector6::zeros();
        for (j, (hyp, ch)) in self.hyps.iter().zip(&self.channels).enumerate() {
            let sv = hyp.signal_std * hyp.signal_std;
            let zs = hyp.scale(z);
            let mut k = DVector::from_iterator(ch.scaled.len(), ch.scaled.iter().map(|x| se_kernel(sv, &zs, x)));
            mean[j] = k.dot(&ch.alpha);
            ch.chol.solve_lower_triangular_mut(&mut k);
            std[j] = (sv - k.norm_squared()).max(0.0).sqrt();
        }
        Prediction { mean, std }
    }
}

impl Channel {
    fn append(&mut self, hyp: &Hyperparams, zs: Feature) {
        let n = self.scaled.len();
        let sv = hyp.signal_std * hyp.signal_std;
        let mut l = DVector::from_iterator(n, self.scaled.iter().map(|x| se_kernel(sv, &zs, x)));
        self.chol.solve_lower_triangular_mut(&mut l);
        let base = sv + hyp.noise_std * hyp.noise_std - l.norm_squared();
        let d2 = JITTER_LADDER
            .iter()
            .map(|j| base + j)
            .find(|d| *d > 0.0)
            .unwrap_or(JITTER_LADDER[JITTER_LADDER.len() - 1]);
        let mut grown = DMatrix::zeros(n + 1, n + 1);
        grown.view_mut((0, 0), (n, n)).copy_from(&self.chol);
        grown.view_mut((n, 0), (1, n)).copy_from(&l.transpose());
        grown[(n, n)] = d2.sqrt();
        self.chol = grown;
        self.scaled.push(zs);
    }

    fn remove_first(&mut self) {
        let n = self.scaled.len();
        let mut x = DVector::from_fn(n - 1, |i, _| self.chol[(i + 1, 0)]);
        let mut l: DMatrix<f64> = self.chol.view((1, 1), (n - 1, n - 1)).into_owned();
        rank_one_update(&mut l, &mut x);
        self.chol = l;
        self.scaled.remove(0);
    }
}

/// In-place update of lower-triangular `L` so that `L Lᵀ ← L Lᵀ + x xᵀ`.
fn rank_one_update(l: &mut DMatrix<f64>, x: &mut DVector<f64>) {
    let n = l.nrows();
    for k in 0..n {
        let lkk = l[(k, k)];
        let r = lkk.hypot(x[k]);
        let c = r / lkk;
        let s = x[k] / lkk;
        l[(k, k)] = r;
        for i in (k + 1)..n {
            l[(i, k)] = (l[(i, k)] + s * x[i]) / c;
            x[i] = c * x[i] - s * l[(i, k)];
        }
    }
}
