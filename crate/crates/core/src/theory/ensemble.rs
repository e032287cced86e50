use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::{dot, sq_norm};

/// One task of a synthetic linearized problem: model output
/// `f(θ) = g·(θ − θ_t) + y` with squared-error loss, minimized at `θ_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask {
    pub theta: Vec<f64>,
    /// Task vector `θ_t − θ₀`.
    pub tau: Vec<f64>,
    /// Data-dependent constant tying the gradient to the task vector.
    pub delta: f64,
    /// Output gradient `δ_t τ_t`.
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticEnsemble {
    pub theta0: Vec<f64>,
    pub tasks: Vec<QuadraticTask>,
    /// `max_t δ_t`.
    pub delta0: f64,
    sq_norms: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub tasks: usize,
    pub dim: usize,
    pub seed: u64,
    pub delta_range: (f64, f64),
    pub norm_range: (f64, f64),
    /// Pairwise cosine between task vectors; 0 gives an orthogonal ensemble.
    pub cosine: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            tasks: 2,
            dim: 16,
            seed: 0,
            delta_range: (0.5, 2.0),
            norm_range: (0.5, 2.0),
            cosine: 0.0,
        }
    }
}

/// Random orthogonal ensemble: `θ₀ ~ N(0, I/m)`, task directions from
/// Gram–Schmidt on Gaussian draws, norms and `δ_t` uniform in their ranges.
pub fn make_ensemble(
    tasks: usize,
    dim: usize,
    seed: u64,
    delta_range: (f64, f64),
    norm_range: (f64, f64),
) -> Result<QuadraticEnsemble> {
    make_correlated_ensemble(&EnsembleConfig {
        tasks,
        dim,
        seed,
        delta_range,
        norm_range,
        cosine: 0.0,
    })
}

pub fn make_correlated_ensemble(cfg: &EnsembleConfig) -> Result<QuadraticEnsemble> {
    let (t, m) = (cfg.tasks, cfg.dim);
    if t == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one task".into()));
    }
    if t > m {
        return Err(Error::InvalidArgument(format!(
            "{t} orthogonal task vectors do not fit in dimension {m}"
        )));
    }
    for (what, (lo, hi)) in [("delta_range", cfg.delta_range), ("norm_range", cfg.norm_range)] {
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{what} ({lo}, {hi}) must be positive and ordered"
            )));
        }
    }
    let c = cfg.cosine;
    let lower = if t > 1 { -1.0 / (t as f64 - 1.0) } else { -1.0 };
    if !(c > lower && c < 1.0) && c != 0.0 {
        return Err(Error::InvalidArgument(format!(
            "pairwise cosine {c} is not attainable by {t} vectors"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = 1.0 / (m as f64).sqrt();
    let theta0: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
    let basis = orthonormal_basis(&mut rng, t, m);
    let chol = cholesky_equicorrelated(t, c);

    let mut taus = Vec::with_capacity(t);
    let mut deltas = Vec::with_capacity(t);
    for row in &chol {
        let mut dir = vec![0.0; m];
        for (w, q) in row.iter().zip(&basis) {
            for (d, qi) in dir.iter_mut().zip(q) {
                *d += w * qi;
            }
        }
        let norm = uniform(&mut rng, cfg.norm_range);
        let len = sq_norm(&dir).sqrt();
        taus.push(dir.iter().map(|d| d * norm / len).collect());
        deltas.push(uniform(&mut rng, cfg.delta_range));
    }
    let mut theta0 = theta0;
    snap_to_grid(&mut theta0, &mut taus);
    QuadraticEnsemble::from_parts(theta0, taus, deltas)
}

/// Rounds every coordinate to a common power-of-two quantum, coarse enough
/// that `θ₀ + τ_t` is exact and `θ_t − θ₀` recovers `τ_t` bit for bit.
fn snap_to_grid(theta0: &mut [f64], taus: &mut [Vec<f64>]) {
    let max = taus
        .iter()
        .flatten()
        .chain(theta0.iter())
        .fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return;
    }
    let quantum = 2f64.powi(max.log2().ceil() as i32 + 1 - 50);
    for x in taus.iter_mut().flatten().chain(theta0.iter_mut()) {
        *x = (*x / quantum).round() * quantum;
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Two rounds of modified Gram–Schmidt over Gaussian vectors.
fn orthonormal_basis(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let start = sq_norm(&v).sqrt();
        for _ in 0..2 {
            for q in &basis {
                let p = dot(&v, q);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= p * qi;
                }
            }
        }
        let len = sq_norm(&v).sqrt();
        if len <= 1e-8 * start {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= len);
        basis.push(v);
    }
    basis
}

/// Lower Cholesky factor of the matrix with unit diagonal and `c` elsewhere.
fn cholesky_equicorrelated(t: usize, c: f64) -> Vec<Vec<f64>> {
    let mut l = vec![vec![0.0; t]; t];
    for i in 0..t {
        for j in 0..=i {
            let target = if i == j { 1.0 } else { c };
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            l[i][j] = if i == j {
                (target - s).sqrt()
            } else {
                (target - s) / l[j][j]
            };
        }
    }
    l
}

impl QuadraticEnsemble {
    /// Builds an ensemble from explicit task vectors and `δ_t` values.
    pub fn from_parts(theta0: Vec<f64>, taus: Vec<Vec<f64>>, deltas: Vec<f64>) -> Result<Self> {
        if taus.is_empty() || taus.len() != deltas.len() {
            return Err(Error::InvalidArgument("need one delta per task vector".into()));
        }
        if taus.iter().any(|t| t.len() != theta0.len()) {
            return Err(Error::InvalidArgument("task vector dimension mismatch".into()));
        }
        if deltas.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return Err(Error::InvalidArgument("deltas must be positive".into()));
        }
        let tasks: Vec<QuadraticTask> = taus
            .into_iter()
            .zip(&deltas)
            .map(|(tau, &delta)| QuadraticTask {
                theta: theta0.iter().zip(&tau).map(|(a, b)| a + b).collect(),
                grad: tau.iter().map(|x| delta * x).collect(),
                tau,
                delta,
            })
            .collect();
        let sq_norms = tasks.iter().map(|t| sq_norm(&t.tau)).collect();
        let delta0 = deltas.iter().copied().fold(f64::MIN, f64::max);
        Ok(QuadraticEnsemble {
            theta0,
            tasks,
            delta0,
            sq_norms,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn dim(&self) -> usize {
        self.theta0.len()
    }

    /// `‖τ_t‖²` per task.
    pub fn sq_norms(&self) -> &[f64] {
        &self.sq_norms
    }

    /// Largest `|cos|` between distinct task vectors.
    pub fn max_abs_cosine(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.tasks.len() {
            for j in i + 1..self.tasks.len() {
                let c = dot(&self.tasks[i].tau, &self.tasks[j].tau) / (self.sq_norms[i] * self.sq_norms[j]).sqrt();
                worst = worst.max(c.abs());
            }
        }
        worst
    }
}
