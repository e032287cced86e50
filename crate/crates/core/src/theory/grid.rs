use super::ensemble::QuadraticEnsemble;
use super::losses::Indicator;

/// Grid points `0, step, 2·step, …` up to and including 1.
pub fn lambda_grid(step: f64) -> Vec<f64> {
    assert!(step > 0.0 && step <= 0.1, "grid step {step} outside (0, 0.1]");
    let n = (1.0 / step).round() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|i| i as f64 * step).filter(|x| *x <= 1.0).collect();
    if *grid.last().unwrap() < 1.0 {
        grid.push(1.0);
    }
    grid
}

impl QuadraticEnsemble {
    /// Per-task grid minimizer of [`QuadraticEnsemble::ald_lambda_term`];
    /// ties go to the smaller coefficient.
    pub fn grid_search_lambda(&self, step: f64, indicator: Indicator) -> Vec<f64> {
        let grid = lambda_grid(step);
        (0..self.num_tasks())
            .map(|t| {
                let mut best = (grid[0], self.ald_lambda_term(t, grid[0], indicator));
                for &l in &grid[1..] {
                    let v = self.ald_lambda_term(t, l, indicator);
                    if v < best.1 {
                        best = (l, v);
                    }
                }
                best.0
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_norms(norms: &[f64], delta: f64) -> QuadraticEnsemble {
        let m = norms.len();
        let taus = norms
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let mut v = vec![0.0; m];
                v[i] = n.sqrt();
                v
            })
            .collect();
        QuadraticEnsemble::from_parts(vec![0.0; m], taus, vec![delta; m]).unwrap()
    }

    #[test]
    fn grid_endpoints() {
        let g = lambda_grid(0.1);
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 1.0);
        let g = lambda_grid(0.03);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn equal_norms_give_uniform_weights() {
        for delta in [0.3, 1.0, 7.0] {
            let e = with_norms(&[2.0; 4], delta);
            let l = e.grid_search_lambda(0.01, Indicator::Squared);
            assert!(l.iter().all(|x| (x - 0.25).abs() < 1e-12), "{l:?}");
        }
    }

    #[test]
    fn recovers_norm_shares() {
        let e = with_norms(&[1.0, 2.0, 3.0], 1.0);
        let l = e.grid_search_lambda(1e-4, Indicator::Squared);
        for (got, want) in l.iter().zip([1.0 / 6.0, 1.0 / 3.0, 0.5]) {
            assert!((got - want).abs() <= 1e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn finer_grids_tighten() {
        let e = with_norms(&[1.0, 2.0, 3.0], 1.0);
        let err = |step: f64| {
            e.grid_search_lambda(step, Indicator::Squared)
                .iter()
                .zip([1.0 / 6.0, 1.0 / 3.0, 0.5])
                .map(|(g, w)| (g - w).abs())
                .fold(0.0, f64::max)
        };
        let errs: Vec<f64> = [0.1, 0.01, 1e-3, 1e-4].iter().map(|&s| err(s)).collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0]), "{errs:?}");
        assert!(errs[3] < errs[0]);
    }
}
