//! Scaling coefficients for task arithmetic.
//!
//! The closed form sets each task's coefficient to its share of the total
//! squared task-vector norm, `λ_t = ‖τ_t‖² / Σ_k ‖τ_k‖²`. No data is needed,
//! only the norms.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::task_vectors::TaskVectorStats;

/// The fixed coefficient commonly used for data-free task arithmetic.
pub const DEFAULT_FIXED_LAMBDA: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientMethod {
    #[serde(rename = "metagpt")]
    MetaGpt,
    Fixed,
    WeightAverage,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub method: CoefficientMethod,
    #[serde(rename = "tasks")]
    pub task_ids: Vec<String>,
    pub lambdas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_stats_digest: Option<String>,
}

impl CoefficientSet {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Validates a set loaded from elsewhere (e.g. a JSON file).
    pub fn external(task_ids: Vec<String>, lambdas: Vec<f64>) -> Result<Self> {
        if task_ids.len() != lambdas.len() || lambdas.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} tasks but {} coefficients",
                task_ids.len(),
                lambdas.len()
            )));
        }
        if lambdas.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument("coefficients must be finite".into()));
        }
        Ok(CoefficientSet {
            method: CoefficientMethod::External,
            task_ids,
            lambdas,
            source_stats_digest: None,
        })
    }
}

/// `task0`, `task1`, ...
pub fn default_task_ids(count: usize) -> Vec<String> {
    (0..count).map(|i| format!("task{i}")).collect()
}

/// SHA-256 over task ids and the bit patterns of the squared norms.
pub fn stats_digest(stats: &TaskVectorStats) -> String {
    let mut h = Sha256::new();
    for (id, n) in stats.task_ids.iter().zip(&stats.sq_norms) {
        h.update((id.len() as u64).to_le_bytes());
        h.update(id.as_bytes());
        h.update(n.to_bits().to_le_bytes());
    }
    format!("sha256:{}", hex::encode(h.finalize()))
}

pub fn metagpt_coefficients(stats: &TaskVectorStats) -> Result<CoefficientSet> {
    if stats.sq_norms.is_empty() {
        return Err(Error::InvalidArgument("no tasks".into()));
    }
    if let Some(t) = stats.sq_norms.iter().position(|&n| !n.is_finite() || n <= 0.0) {
        return Err(Error::DegenerateTaskVector(stats.task_ids[t].clone()));
    }
    let total: f64 = stats.sq_norms.iter().sum();
    Ok(CoefficientSet {
        method: CoefficientMethod::MetaGpt,
        task_ids: stats.task_ids.clone(),
        lambdas: stats.sq_norms.iter().map(|n| n / total).collect(),
        source_stats_digest: Some(stats_digest(stats)),
    })
}

pub fn fixed_coefficients(task_ids: Vec<String>, value: f64) -> Result<CoefficientSet> {
    if task_ids.is_empty() {
        return Err(Error::InvalidArgument("no tasks".into()));
    }
    if !value.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "fixed coefficient {value} is not finite"
        )));
    }
    Ok(CoefficientSet {
        method: CoefficientMethod::Fixed,
        lambdas: vec![value; task_ids.len()],
        task_ids,
        source_stats_digest: None,
    })
}

pub fn weight_average_coefficients(task_ids: Vec<String>) -> Result<CoefficientSet> {
    if task_ids.is_empty() {
        return Err(Error::InvalidArgument("no tasks".into()));
    }
    let w = 1.0 / task_ids.len() as f64;
    Ok(CoefficientSet {
        method: CoefficientMethod::WeightAverage,
        lambdas: vec![w; task_ids.len()],
        task_ids,
        source_stats_digest: None,
    })
}
