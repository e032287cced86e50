use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::ensemble::QuadraticEnsemble;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianOptions {
    /// Central-difference step.
    pub step: f64,
    /// Off-diagonal coordinate pairs sampled when the dimension is large.
    pub pairs: usize,
    pub seed: u64,
}

impl Default for HessianOptions {
    fn default() -> Self {
        HessianOptions {
            step: 1e-4,
            pairs: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HessianResidual {
    /// Max `|H_fd[i][j] − g_i g_j|` over the sampled pairs.
    pub max_hessian_residual: f64,
    /// `‖δ_t τ_t − g_t‖`.
    pub gradient_identity_residual: f64,
    /// Max `|∇L_fd − ∇L|` relative to `‖∇L‖_∞`.
    pub max_gradient_rel_error: f64,
    /// `(i, j, finite difference, analytic)` for every sampled pair.
    pub samples: Vec<(usize, usize, f64, f64)>,
}

/// Every pair for small dimensions, otherwise the diagonal entry of the
/// largest gradient component plus `count` random pairs.
fn coordinate_pairs(grad: &[f64], count: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let m = grad.len();
    if m * m <= count.max(16) * 2 {
        return (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    }
    let top = (0..m)
        .max_by(|&a, &b| grad[a].abs().total_cmp(&grad[b].abs()))
        .unwrap_or(0);
    let mut pairs = vec![(top, top)];
    pairs.extend((0..count).map(|_| (rng.random_range(0..m), rng.random_range(0..m))));
    pairs
}

impl QuadraticEnsemble {
    /// Checks the loss Hessian against `g gᵀ` and the gradient against its
    /// analytic form, both by central differences around a unit-scale point
    /// near `θ_t`.
    pub fn verify_hessian_identity(&self, t: usize, opts: &HessianOptions) -> HessianResidual {
        let task = &self.tasks[t];
        let m = self.dim();
        let h = opts.step;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let scale = 1.0 / (m as f64).sqrt();
        let x: Vec<f64> = task
            .theta
            .iter()
            .map(|v| v + rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        let loss = |p: &[f64]| self.exact_loss(t, p);

        let mut samples = Vec::new();
        let mut max_hessian_residual: f64 = 0.0;
        let mut p = x.clone();
        for (i, j) in coordinate_pairs(&task.grad, opts.pairs, &mut rng) {
            let mut eval = |di: f64, dj: f64| {
                p[i] += di;
                p[j] += dj;
                let v = loss(&p);
                p[i] = x[i];
                p[j] = x[j];
                v
            };
            let fd = (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4.0 * h * h);
            let exact = task.grad[i] * task.grad[j];
            max_hessian_residual = max_hessian_residual.max((fd - exact).abs());
            samples.push((i, j, fd, exact));
        }

        let analytic = self.loss_gradient(t, &x);
        let scale = analytic
            .iter()
            .fold(0.0f64, |a, g| a.max(g.abs()))
            .max(f64::MIN_POSITIVE);
        let mut max_gradient_rel_error: f64 = 0.0;
        for i in 0..m {
            p[i] = x[i] + h;
            let up = loss(&p);
            p[i] = x[i] - h;
            let down = loss(&p);
            p[i] = x[i];
            let fd = (up - down) / (2.0 * h);
            max_gradient_rel_error = max_gradient_rel_error.max((fd - analytic[i]).abs() / scale);
        }

        let gradient_identity_residual = task
            .tau
            .iter()
            .zip(&task.grad)
            .map(|(tau, g)| (task.delta * tau - g).powi(2))
            .sum::<f64>()
            .sqrt();

        HessianResidual {
            max_hessian_residual,
            gradient_identity_residual,
            max_gradient_rel_error,
            samples,
        }
    }
}
