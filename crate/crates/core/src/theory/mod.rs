//! Synthetic linearized multi-task problems on which loss differences are
//! exactly computable, plus the checks run against them: exactness of the
//! quadratic form, dominance of the upper bounds, grid-search optimality of
//! the closed-form coefficients, and finite-difference Hessian identities.

mod ensemble;
mod grid;
mod hessian;
mod losses;
mod suites;

pub use ensemble::{make_correlated_ensemble, make_ensemble, EnsembleConfig, QuadraticEnsemble, QuadraticTask};
pub use grid::lambda_grid;
pub use hessian::{HessianOptions, HessianResidual};
pub use losses::Indicator;
pub use suites::{
    run_suite, run_suites, Suite, SuiteConfig, SuiteReport, VerifyReport, DOMINANCE_SLACK, GRADIENT_IDENTITY_TOL,
    GRADIENT_REL_TOL, HESSIAN_TOL, LEMMA1_REL_TOL, PROBE_COSINE, THM4_GRID_STEP, THM4_TOL,
};
