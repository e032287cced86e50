//! Randomized verification suites. Each trial draws its own ensemble and
//! coefficients from a seed derived from the root seed, so any single trial
//! can be replayed.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ensemble::{make_correlated_ensemble, EnsembleConfig, QuadraticEnsemble};
use super::hessian::HessianOptions;
use super::losses::Indicator;
use crate::coefficients::metagpt_coefficients;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::task_vectors::TaskVectorStats;

pub const LEMMA1_REL_TOL: f64 = 1e-12;
pub const DOMINANCE_SLACK: f64 = 1e-9;
pub const THM4_GRID_STEP: f64 = 1e-4;
pub const THM4_TOL: f64 = 1e-4;
pub const HESSIAN_TOL: f64 = 1e-4;
pub const GRADIENT_IDENTITY_TOL: f64 = 1e-14;
pub const GRADIENT_REL_TOL: f64 = 1e-5;
/// Pairwise cosine of the deliberately non-orthogonal probe ensembles.
pub const PROBE_COSINE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    Lemma1,
    Thm1,
    Thm2,
    Thm3,
    Thm4,
    Hessian,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Lemma1,
        Suite::Thm1,
        Suite::Thm2,
        Suite::Thm3,
        Suite::Thm4,
        Suite::Hessian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Lemma1 => "lemma1",
            Suite::Thm1 => "thm1",
            Suite::Thm2 => "thm2",
            Suite::Thm3 => "thm3",
            Suite::Thm4 => "thm4",
            Suite::Hessian => "hessian",
        }
    }

    /// Parses a suite name; `all` expands to every suite.
    pub fn parse_selection(s: &str) -> Result<Vec<Suite>> {
        if s == "all" {
            Ok(Suite::ALL.to_vec())
        } else {
            Ok(vec![s.parse()?])
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite {s:?}")))
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    pub trials: usize,
    pub seed: u64,
    /// Fixed dimension; random in 8..=128 when unset.
    pub dim: Option<usize>,
    /// Fixed task count; random in 2..=8 when unset.
    pub tasks: Option<usize>,
    pub legacy_indicator: bool,
    pub delta_range: (f64, f64),
    pub norm_range: (f64, f64),
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            trials: 100,
            seed: 0,
            dim: None,
            tasks: None,
            legacy_indicator: false,
            delta_range: (0.5, 2.0),
            norm_range: (0.5, 2.0),
        }
    }
}

impl SuiteConfig {
    fn indicator(&self) -> Indicator {
        if self.legacy_indicator {
            Indicator::Legacy
        } else {
            Indicator::Squared
        }
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if let (Some(t), Some(m)) = (self.tasks, self.dim) {
            if t > m {
                return Err(Error::InvalidArgument(format!("{t} tasks do not fit in dimension {m}")));
            }
        }
        if self.tasks == Some(0) || self.dim == Some(0) {
            return Err(Error::InvalidArgument("tasks and dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub theorem: String,
    pub trials: usize,
    pub violations: usize,
    /// Largest observed gap against the suite's tolerance (positive gaps in
    /// dominance suites are violations once they exceed the slack).
    pub max_gap: f64,
    pub tolerance: f64,
    /// False when the suite only records behaviour (e.g. legacy indicator).
    pub asserted: bool,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        !self.asserted || self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suites: Vec<SuiteReport>,
    pub passed: bool,
}

pub fn run_suites(suites: &[Suite], cfg: &SuiteConfig) -> Result<VerifyReport> {
    let reports = suites.iter().map(|s| run_suite(*s, cfg)).collect::<Result<Vec<_>>>()?;
    let passed = reports.iter().all(SuiteReport::passed);
    Ok(VerifyReport {
        suites: reports,
        passed,
    })
}

struct Trial {
    ensemble: QuadraticEnsemble,
    lambdas: Vec<f64>,
    rng: ChaCha8Rng,
}

fn draw_trial(cfg: &SuiteConfig, index: usize, cosine: f64) -> Result<Trial> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index as u64));
    let tasks = cfg.tasks.unwrap_or_else(|| rng.random_range(2..=8));
    let dim = cfg
        .dim
        .unwrap_or_else(|| rng.random_range(tasks.max(8)..=tasks.max(128)));
    let ensemble = make_correlated_ensemble(&EnsembleConfig {
        tasks,
        dim,
        seed: rng.random(),
        delta_range: cfg.delta_range,
        norm_range: cfg.norm_range,
        cosine,
    })?;
    let lambdas = (0..tasks).map(|_| rng.random::<f64>()).collect();
    Ok(Trial { ensemble, lambdas, rng })
}

#[derive(Default)]
struct Tally {
    violations: usize,
    max_gap: f64,
    seen: bool,
}

impl Tally {
    fn record(&mut self, gap: f64, tolerance: f64) {
        if !self.seen || gap > self.max_gap {
            self.max_gap = gap;
            self.seen = true;
        }
        if gap.is_nan() || gap > tolerance {
            self.violations += 1;
        }
    }
}

pub fn run_suite(suite: Suite, cfg: &SuiteConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let ind = cfg.indicator();
    let bound_suite = matches!(suite, Suite::Thm1 | Suite::Thm2 | Suite::Thm3 | Suite::Thm4);
    let asserted = !(bound_suite && cfg.legacy_indicator);
    let mut tally = Tally::default();
    let mut details = BTreeMap::new();

    let tolerance = match suite {
        Suite::Lemma1 => {
            for i in 0..cfg.trials {
                let tr = draw_trial(cfg, i, 0.0)?;
                for t in 0..tr.ensemble.num_tasks() {
                    let direct = tr.ensemble.exact_tld(t, &tr.lambdas);
                    let form = tr.ensemble.tld_quadratic_form(t, &tr.lambdas);
                    let scale = direct.abs().max(form.abs());
                    let rel = if scale == 0.0 {
                        0.0
                    } else {
                        (direct - form).abs() / scale
                    };
                    tally.record(rel, LEMMA1_REL_TOL);
                }
            }
            LEMMA1_REL_TOL
        }
        Suite::Thm1 => {
            let mut probe = Tally::default();
            for i in 0..cfg.trials {
                let tr = draw_trial(cfg, i, 0.0)?;
                for t in 0..tr.ensemble.num_tasks() {
                    let gap = tr.ensemble.exact_tld(t, &tr.lambdas) - tr.ensemble.tld_bound(t, &tr.lambdas, ind);
                    tally.record(gap, DOMINANCE_SLACK);
                }
                let tr = draw_trial(cfg, i, PROBE_COSINE)?;
                for t in 0..tr.ensemble.num_tasks() {
                    let gap = tr.ensemble.exact_tld(t, &tr.lambdas) - tr.ensemble.tld_bound(t, &tr.lambdas, ind);
                    probe.record(gap, DOMINANCE_SLACK);
                }
            }
            details.insert("nonorthogonal_cosine".into(), PROBE_COSINE);
            details.insert("nonorthogonal_violations".into(), probe.violations as f64);
            details.insert("nonorthogonal_max_gap".into(), probe.max_gap);
            DOMINANCE_SLACK
        }
        Suite::Thm2 => {
            for i in 0..cfg.trials {
                let tr = draw_trial(cfg, i, 0.0)?;
                let gap = tr.ensemble.ald(&tr.lambdas) - tr.ensemble.ald_bound(&tr.lambdas, ind);
                tally.record(gap, DOMINANCE_SLACK);
            }
            DOMINANCE_SLACK
        }
        Suite::Thm3 => {
            let mut chain = Tally::default();
            for i in 0..cfg.trials {
                let tr = draw_trial(cfg, i, 0.0)?;
                let decomposed = tr.ensemble.ald_decomposed(&tr.lambdas, ind);
                tally.record(tr.ensemble.ald(&tr.lambdas) - decomposed, DOMINANCE_SLACK);
                chain.record(tr.ensemble.ald_bound(&tr.lambdas, ind) - decomposed, DOMINANCE_SLACK);
            }
            details.insert("bound_vs_decomposition_violations".into(), chain.violations as f64);
            details.insert("bound_vs_decomposition_max_gap".into(), chain.max_gap);
            DOMINANCE_SLACK
        }
        Suite::Thm4 => {
            for i in 0..cfg.trials {
                let tr = draw_trial(cfg, i, 0.0)?;
                let e = &tr.ensemble;
                let stats = TaskVectorStats {
                    task_ids: crate::coefficients::default_task_ids(e.num_tasks()),
                    sq_norms: e.sq_norms().to_vec(),
                    gram: None,
                    per_tensor_breakdown: None,
                };
                let closed = metagpt_coefficients(&stats)?.lambdas;
                let grid = e.grid_search_lambda(THM4_GRID_STEP, ind);
                let gap = closed.iter().zip(&grid).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                tally.record(gap, THM4_TOL);
            }
            details.insert("grid_step".into(), THM4_GRID_STEP);
            THM4_TOL
        }
        Suite::Hessian => {
            let mut identity: f64 = 0.0;
            let mut gradient: f64 = 0.0;
            for i in 0..cfg.trials {
                let mut tr = draw_trial(cfg, i, 0.0)?;
                let t = tr.rng.random_range(0..tr.ensemble.num_tasks());
                let opts = HessianOptions {
                    seed: tr.rng.random(),
                    ..Default::default()
                };
                let r = tr.ensemble.verify_hessian_identity(t, &opts);
                identity = identity.max(r.gradient_identity_residual);
                gradient = gradient.max(r.max_gradient_rel_error);
                let ok = r.gradient_identity_residual <= GRADIENT_IDENTITY_TOL
                    && r.max_gradient_rel_error < GRADIENT_REL_TOL;
                // Folding the secondary checks into the gap keeps one violation per trial.
                tally.record(if ok { r.max_hessian_residual } else { f64::INFINITY }, HESSIAN_TOL);
            }
            details.insert("max_gradient_identity_residual".into(), identity);
            details.insert("max_gradient_rel_error".into(), gradient);
            HESSIAN_TOL
        }
    };

    Ok(SuiteReport {
        theorem: suite.name().to_string(),
        trials: cfg.trials,
        violations: tally.violations,
        max_gap: tally.max_gap,
        tolerance,
        asserted,
        details,
    })
}
