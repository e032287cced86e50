//! Exact losses, loss differences and their upper bounds on a
//! [`QuadraticEnsemble`].
//!
//! With `f(θ) = g_t·(θ − θ_t) + y` and `L_t = ½(f − y)²` the Hessian is the
//! constant `g_t g_tᵀ`, so the second-order expansion of the loss difference
//! around `θ_t` is exact: `TLD_t = ½ (g_t·h_t)²`.

use super::ensemble::QuadraticEnsemble;
use crate::numeric::{dot2, dot2_split, two_prod, two_sum};

/// How the `k = t` term of the bound is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Indicator {
    /// `(1 − λ_t)²`, the weight produced by expanding `‖h_t‖²`.
    #[default]
    Squared,
    /// `1 − λ_t²`, the literal alternative notation, kept for comparison.
    Legacy,
}

impl Indicator {
    #[inline]
    pub fn self_weight(self, lambda: f64) -> f64 {
        match self {
            Indicator::Squared => (1.0 - lambda) * (1.0 - lambda),
            Indicator::Legacy => 1.0 - lambda * lambda,
        }
    }
}

impl QuadraticEnsemble {
    fn check_lambdas(&self, lambdas: &[f64]) {
        assert_eq!(lambdas.len(), self.num_tasks(), "one coefficient per task");
    }

    /// `½ (g_t·(θ − θ_t))²`.
    pub fn exact_loss(&self, t: usize, theta: &[f64]) -> f64 {
        let task = &self.tasks[t];
        assert_eq!(theta.len(), self.dim());
        let diff: Vec<f64> = theta.iter().zip(&task.theta).map(|(a, b)| a - b).collect();
        let r = dot2(&task.grad, &diff);
        0.5 * r * r
    }

    /// Analytic gradient `g_t (g_t·(θ − θ_t))`.
    pub fn loss_gradient(&self, t: usize, theta: &[f64]) -> Vec<f64> {
        let task = &self.tasks[t];
        let diff: Vec<f64> = theta.iter().zip(&task.theta).map(|(a, b)| a - b).collect();
        let r = dot2(&task.grad, &diff);
        task.grad.iter().map(|g| g * r).collect()
    }

    /// `θ₀ + Σ_t λ_t τ_t`, summing tasks in order per element.
    pub fn merged_theta(&self, lambdas: &[f64]) -> Vec<f64> {
        self.check_lambdas(lambdas);
        (0..self.dim())
            .map(|i| {
                let acc = self
                    .tasks
                    .iter()
                    .zip(lambdas)
                    .fold(0.0, |acc, (task, l)| acc + l * task.tau[i]);
                self.theta0[i] + acc
            })
            .collect()
    }

    /// `h_t = Σ_{k≠t} λ_k τ_k − (1 − λ_t) τ_t`, the offset of the merged model
    /// from `θ_t`.
    pub fn h_vector(&self, t: usize, lambdas: &[f64]) -> Vec<f64> {
        let (hi, lo) = self.h_split(t, lambdas);
        hi.iter().zip(&lo).map(|(h, l)| h + l).collect()
    }

    /// `h_t` in double-double. Its cross-task part is orthogonal to `g_t`, so
    /// rounding it to `f64` would swamp `g_t·h_t` when `λ_t` is near one.
    fn h_split(&self, t: usize, lambdas: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.check_lambdas(lambdas);
        (0..self.dim())
            .map(|i| {
                let (mut hi, mut lo) = (0.0, 0.0);
                for (k, (task, l)) in self.tasks.iter().zip(lambdas).enumerate() {
                    let w = if k == t { -(1.0 - l) } else { *l };
                    let (p, pe) = two_prod(w, task.tau[i]);
                    let (s, se) = two_sum(hi, p);
                    hi = s;
                    lo += pe + se;
                }
                (hi, lo)
            })
            .unzip()
    }

    /// Loss difference evaluated directly: `L_t(θ_merged) − L_t(θ_t)`.
    pub fn exact_tld(&self, t: usize, lambdas: &[f64]) -> f64 {
        let task = &self.tasks[t];
        let (hi, lo) = self.merged_offset(t, lambdas);
        let r = dot2_split(&task.grad, &hi, &lo);
        0.5 * r * r - self.exact_loss(t, &task.theta)
    }

    /// `θ_merged − θ_t` with the merged point carried in double-double, so
    /// the subtraction does not cancel when `λ_t` approaches one.
    fn merged_offset(&self, t: usize, lambdas: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.check_lambdas(lambdas);
        (0..self.dim())
            .map(|i| {
                let (mut hi, mut lo) = (self.theta0[i], 0.0);
                for (task, l) in self.tasks.iter().zip(lambdas) {
                    let (p, pe) = two_prod(*l, task.tau[i]);
                    let (s, se) = two_sum(hi, p);
                    hi = s;
                    lo += pe + se;
                }
                let (d, de) = two_sum(hi, -self.tasks[t].theta[i]);
                (d, de + lo)
            })
            .unzip()
    }

    /// Loss difference through the quadratic form `½ h_tᵀ (g_t g_tᵀ) h_t`.
    pub fn tld_quadratic_form(&self, t: usize, lambdas: &[f64]) -> f64 {
        let (hi, lo) = self.h_split(t, lambdas);
        let r = dot2_split(&self.tasks[t].grad, &hi, &lo);
        0.5 * r * r
    }

    /// `(δ_t²/2) ‖τ_t‖² [Σ_{k≠t} λ_k² ‖τ_k‖² + w(λ_t) ‖τ_t‖²]`.
    pub fn tld_bound(&self, t: usize, lambdas: &[f64], indicator: Indicator) -> f64 {
        self.check_lambdas(lambdas);
        let n = self.sq_norms();
        let inner = lambdas.iter().zip(n).enumerate().fold(0.0, |acc, (k, (l, nk))| {
            let w = if k == t { indicator.self_weight(*l) } else { l * l };
            acc + w * nk
        });
        let d = self.tasks[t].delta;
        0.5 * d * d * n[t] * inner
    }

    /// Mean loss difference over tasks.
    pub fn ald(&self, lambdas: &[f64]) -> f64 {
        let t = self.num_tasks();
        (0..t).map(|i| self.exact_tld(i, lambdas)).sum::<f64>() / t as f64
    }

    /// Sum of the per-task bounds (keeps the `½`, drops the `1/T`).
    pub fn ald_bound(&self, lambdas: &[f64], indicator: Indicator) -> f64 {
        (0..self.num_tasks())
            .map(|i| self.tld_bound(i, lambdas, indicator))
            .sum()
    }

    /// The part of the decomposed bound that depends on `λ_t` alone:
    /// `(δ₀²/2) ‖τ_t‖² [w(λ_t) ‖τ_t‖² + λ_t² Σ_{j≠t} ‖τ_j‖²]`.
    pub fn ald_lambda_term(&self, t: usize, lambda: f64, indicator: Indicator) -> f64 {
        let n = self.sq_norms();
        let others: f64 = n.iter().enumerate().filter(|(j, _)| *j != t).map(|(_, v)| v).sum();
        let d0 = self.delta0;
        0.5 * d0 * d0 * n[t] * (indicator.self_weight(lambda) * n[t] + lambda * lambda * others)
    }

    /// `Σ_t ald_lambda_term(t, λ_t)`.
    pub fn ald_decomposed(&self, lambdas: &[f64], indicator: Indicator) -> f64 {
        self.check_lambdas(lambdas);
        lambdas
            .iter()
            .enumerate()
            .map(|(t, &l)| self.ald_lambda_term(t, l, indicator))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::theory::make_ensemble;

    fn unit_pair() -> QuadraticEnsemble {
        QuadraticEnsemble::from_parts(vec![0.3, -0.2], vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn loss_at_minimizer_and_on_axis() {
        let e = QuadraticEnsemble::from_parts(vec![0.0, 0.0], vec![vec![1.0, 0.0]], vec![1.0]).unwrap();
        assert_eq!(e.exact_loss(0, &e.tasks[0].theta.clone()), 0.0);
        let theta = vec![e.tasks[0].theta[0] + 2.0, e.tasks[0].theta[1]];
        assert_eq!(e.exact_loss(0, &theta), 2.0);
        let grad = e.loss_gradient(0, &e.tasks[0].theta.clone());
        assert!(grad.iter().all(|g| g.abs() < 1e-10));
    }

    #[test]
    fn loss_matches_integral_of_finite_difference_gradient() {
        // L(θ) − L(θ_t) = ∫₀¹ ∇L(θ_t + s d)·d ds with d = θ − θ_t. The
        // gradient is reconstructed from central differences of L and the
        // integral taken by Simpson's rule (exact for a linear integrand).
        let e = make_ensemble(3, 12, 4, (0.5, 2.0), (0.5, 2.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let theta: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = 1;
        let origin = &e.tasks[t].theta;
        let d: Vec<f64> = theta.iter().zip(origin).map(|(a, b)| a - b).collect();
        let fd_grad_dot = |s: f64| -> f64 {
            let point: Vec<f64> = origin.iter().zip(&d).map(|(o, di)| o + s * di).collect();
            let h = 1e-5;
            (0..12)
                .map(|i| {
                    let mut p = point.clone();
                    p[i] += h;
                    let up = e.exact_loss(t, &p);
                    p[i] -= 2.0 * h;
                    let down = e.exact_loss(t, &p);
                    (up - down) / (2.0 * h) * d[i]
                })
                .sum()
        };
        let integral = (fd_grad_dot(0.0) + 4.0 * fd_grad_dot(0.5) + fd_grad_dot(1.0)) / 6.0;
        let direct = e.exact_loss(t, &theta);
        assert!((integral - direct).abs() < 1e-6, "{integral} vs {direct}");
    }

    #[test]
    fn merged_theta_cases() {
        let e = unit_pair();
        assert_eq!(e.merged_theta(&[0.0, 0.0]), e.theta0);
        assert_eq!(e.merged_theta(&[0.5, 0.25]), vec![0.3 + 0.5, -0.2 + 0.25]);
        let single = QuadraticEnsemble::from_parts(vec![1.0, 2.0], vec![vec![0.5, -1.0]], vec![1.0]).unwrap();
        assert_eq!(single.merged_theta(&[1.0]), single.tasks[0].theta);
    }

    #[test]
    fn h_vector_cases() {
        let e = unit_pair();
        assert_eq!(e.h_vector(0, &[1.0, 0.0]), vec![0.0, 0.0]);
        let single = QuadraticEnsemble::from_parts(vec![0.0, 0.0], vec![vec![0.5, -1.0]], vec![1.0]).unwrap();
        assert_eq!(single.h_vector(0, &[0.0]), vec![-0.5, 1.0]);

        let e = make_ensemble(5, 40, 9, (0.5, 2.0), (0.5, 2.0)).unwrap();
        let lambdas = [0.1, 0.7, 0.3, 0.9, 0.5];
        let merged = e.merged_theta(&lambdas);
        for t in 0..5 {
            let h = e.h_vector(t, &lambdas);
            let resid: f64 = merged
                .iter()
                .zip(&e.tasks[t].theta)
                .zip(&h)
                .map(|((m, th), hi)| (m - th - hi).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(resid < 1e-12, "t={t} resid={resid}");
        }
    }

    #[test]
    fn tld_examples() {
        let e = unit_pair();
        // θ_t = fl(0.3 + 1) is one rounding away from θ₀ + τ_t.
        assert!(e.exact_tld(0, &[1.0, 0.0]).abs() < 1e-30);
        // ½ (1 − 0.5)² · 1²
        let tld = e.exact_tld(0, &[0.5, 0.5]);
        assert!((tld - 0.125).abs() < 1e-15);
        assert!((e.tld_quadratic_form(0, &[0.5, 0.5]) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn bound_examples() {
        let e = unit_pair();
        let b = e.tld_bound(0, &[0.5, 0.5], Indicator::Squared);
        assert_eq!(b, 0.25);
        assert!(b >= e.exact_tld(0, &[0.5, 0.5]));
        assert_eq!(e.tld_bound(0, &[1.0, 0.0], Indicator::Squared), 0.0);
        assert_eq!(e.tld_bound(0, &[0.5, 0.5], Indicator::Legacy), 0.5 * (0.25 + 0.75));
    }

    #[test]
    fn ald_cases() {
        let single = QuadraticEnsemble::from_parts(vec![0.0; 3], vec![vec![1.0, 2.0, 0.0]], vec![1.5]).unwrap();
        assert_eq!(single.ald(&[1.0]), 0.0);

        let sym = QuadraticEnsemble::from_parts(
            vec![0.1, 0.2, 0.3],
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            vec![1.3; 3],
        )
        .unwrap();
        let a = sym.ald(&[0.1, 0.5, 0.8]);
        let b = sym.ald(&[0.8, 0.1, 0.5]);
        assert!((a - b).abs() < 1e-15);
        assert!(a <= sym.ald_bound(&[0.1, 0.5, 0.8], Indicator::Squared));
    }

    #[test]
    fn lambda_term_example() {
        // norms² = [1, 2, 3], δ₀ = 1, t = 3, λ₃ = 0.5 → ½·3·[0.25·3 + 0.25·3] = 2.25
        let e = QuadraticEnsemble::from_parts(
            vec![0.0; 3],
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 2f64.sqrt(), 0.0],
                vec![0.0, 0.0, 3f64.sqrt()],
            ],
            vec![1.0, 0.5, 1.0],
        )
        .unwrap();
        assert!((e.ald_lambda_term(2, 0.5, Indicator::Squared) - 2.25).abs() < 1e-14);

        let single = QuadraticEnsemble::from_parts(vec![0.0], vec![vec![2.0]], vec![1.0]).unwrap();
        assert_eq!(single.ald_lambda_term(0, 1.0, Indicator::Squared), 0.0);
    }

    #[test]
    fn lambda_term_vertex_is_norm_share() {
        // Vertex of a λ² + b (1 − λ)² ... expanded symbolically:
        // d/dλ [(1−λ)² a + λ² s] = 0  ⇒  λ = a / (a + s).
        let e = make_ensemble(4, 16, 21, (0.5, 2.0), (0.5, 2.0)).unwrap();
        let total: f64 = e.sq_norms().iter().sum();
        for t in 0..4 {
            let vertex = e.sq_norms()[t] / total;
            let f = |l: f64| e.ald_lambda_term(t, l, Indicator::Squared);
            assert!(f(vertex) <= f(vertex + 1e-4));
            assert!(f(vertex) <= f(vertex - 1e-4));
        }
    }
}
