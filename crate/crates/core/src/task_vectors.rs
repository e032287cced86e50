//! Task vectors (fine-tuned minus base) and their streaming sufficient
//! statistics: squared norms, optional Gram matrix, cosine similarities.
//!
//! Reductions are sequential in element order within a tensor; per-tensor
//! partials are folded in sorted-name order, so results are bit-reproducible.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{validate_compatibility, CheckpointHandle, TensorBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyPolicy {
    /// Every model must carry exactly the base's tensor names.
    #[default]
    Strict,
    /// Tensors missing from a model count as unchanged (zero task vector);
    /// tensors absent from the base are skipped.
    Lenient,
}

/// Name coverage of a set of models relative to a base.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Coverage {
    /// Base tensor name -> ids of the tasks lacking it.
    pub missing: BTreeMap<String, Vec<String>>,
    /// Names present in some model but not in the base.
    pub skipped: Vec<String>,
}

/// Checks shapes and name coverage of `models` against `base`.
pub fn check_coverage(
    base: &CheckpointHandle,
    models: &[&CheckpointHandle],
    task_ids: &[String],
    policy: KeyPolicy,
) -> Result<Coverage> {
    if models.len() != task_ids.len() {
        return Err(Error::InvalidArgument(format!(
            "{} models but {} task ids",
            models.len(),
            task_ids.len()
        )));
    }
    let mut all = Vec::with_capacity(models.len() + 1);
    all.push(base);
    all.extend_from_slice(models);
    let report = validate_compatibility(&all);

    if let Some(conflict) = report.shape_mismatch.first() {
        let mut shapes = conflict.shapes.iter().flatten();
        let left = shapes.next().cloned().unwrap_or_default();
        let right = shapes.find(|s| **s != left).cloned().unwrap_or_default();
        return Err(Error::ShapeMismatch {
            name: conflict.name.clone(),
            left,
            right,
        });
    }

    let mut coverage = Coverage::default();
    for (name, lacking) in &report.missing {
        if lacking.first() == Some(&0) {
            if policy == KeyPolicy::Strict {
                return Err(Error::MissingTensor {
                    name: name.clone(),
                    model: base.path().display().to_string(),
                });
            }
            coverage.skipped.push(name.clone());
            continue;
        }
        let ids: Vec<String> = lacking.iter().map(|&i| task_ids[i - 1].clone()).collect();
        if policy == KeyPolicy::Strict {
            return Err(Error::MissingTensor {
                name: name.clone(),
                model: models[lacking[0] - 1].path().display().to_string(),
            });
        }
        coverage.missing.insert(name.clone(), ids);
    }
    Ok(coverage)
}

/// Element-wise `fine - base`.
pub fn task_vector_tensor(fine: &TensorBuffer, base: &TensorBuffer) -> Result<TensorBuffer> {
    if fine.shape != base.shape {
        return Err(Error::ShapeMismatch {
            name: fine.name.clone(),
            left: fine.shape.clone(),
            right: base.shape.clone(),
        });
    }
    let values = fine.values.iter().zip(&base.values).map(|(f, b)| f - b).collect();
    Ok(TensorBuffer {
        name: fine.name.clone(),
        shape: fine.shape.clone(),
        values,
    })
}

/// In-place variant: turns a fine-tuned buffer into its task vector.
pub(crate) fn subtract_base(fine: &mut [f64], base: &[f64]) {
    for (f, b) in fine.iter_mut().zip(base) {
        *f -= *b;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskVectorStats {
    pub task_ids: Vec<String>,
    pub sq_norms: Vec<f64>,
    /// Symmetric T x T inner products; `gram[t][t] == sq_norms[t]`.
    pub gram: Option<Vec<Vec<f64>>>,
    pub per_tensor_breakdown: Option<BTreeMap<String, Vec<f64>>>,
}

impl TaskVectorStats {
    pub fn num_tasks(&self) -> usize {
        self.task_ids.len()
    }

    /// Stats of in-memory task vectors, each treated as a single tensor.
    pub fn from_vectors(task_ids: Vec<String>, vectors: &[&[f64]], want_gram: bool) -> Self {
        let mut acc = StatsAccumulator::new(task_ids, want_gram, false);
        acc.add_tensor("", vectors);
        acc.finish()
    }
}

/// Folds per-tensor partial sums into running totals. Tensors must be added
/// in sorted-name order for reproducible results.
#[derive(Debug)]
pub struct StatsAccumulator {
    task_ids: Vec<String>,
    sq: Vec<f64>,
    gram: Option<Vec<f64>>,
    breakdown: Option<BTreeMap<String, Vec<f64>>>,
}

impl StatsAccumulator {
    pub fn new(task_ids: Vec<String>, want_gram: bool, breakdown: bool) -> Self {
        let t = task_ids.len();
        StatsAccumulator {
            task_ids,
            sq: vec![0.0; t],
            gram: want_gram.then(|| vec![0.0; t * t]),
            breakdown: breakdown.then(BTreeMap::new),
        }
    }

    pub fn wants_gram(&self) -> bool {
        self.gram.is_some()
    }

    /// Adds one tensor's task vectors (one slice per task, equal lengths).
    pub fn add_tensor(&mut self, name: &str, vectors: &[&[f64]]) {
        let t = self.task_ids.len();
        assert_eq!(vectors.len(), t, "one vector per task");
        let partial: Vec<f64> = vectors.iter().map(|v| crate::numeric::sq_norm(v)).collect();
        self.add_partial_norms(name, &partial);
        if let Some(gram) = &mut self.gram {
            for i in 0..t {
                gram[i * t + i] += partial[i];
                for j in i + 1..t {
                    gram[i * t + j] += crate::numeric::dot(vectors[i], vectors[j]);
                }
            }
        }
    }

    /// Adds squared norms only; used when task vectors are streamed one at a
    /// time and no Gram matrix is needed.
    pub fn add_partial_norms(&mut self, name: &str, partial: &[f64]) {
        for (s, p) in self.sq.iter_mut().zip(partial) {
            *s += p;
        }
        if let Some(b) = &mut self.breakdown {
            b.insert(name.to_string(), partial.to_vec());
        }
    }

    pub fn finish(self) -> TaskVectorStats {
        let t = self.task_ids.len();
        let gram = self.gram.map(|g| {
            let mut full = vec![vec![0.0; t]; t];
            for i in 0..t {
                full[i][i] = g[i * t + i];
                for j in i + 1..t {
                    full[i][j] = g[i * t + j];
                    full[j][i] = g[i * t + j];
                }
            }
            full
        });
        TaskVectorStats {
            task_ids: self.task_ids,
            sq_norms: self.sq,
            gram,
            per_tensor_breakdown: self.breakdown,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StatsOptions {
    pub want_gram: bool,
    pub policy: KeyPolicy,
    pub breakdown: bool,
}

/// Streams over the base's tensors and accumulates task-vector statistics.
/// At most `T + 1` tensor buffers are live at once with a Gram matrix, two
/// without.
pub fn compute_stats(
    base: &CheckpointHandle,
    models: &[&CheckpointHandle],
    task_ids: &[String],
    opts: &StatsOptions,
) -> Result<(TaskVectorStats, Coverage)> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("at least one model is required".into()));
    }
    let coverage = check_coverage(base, models, task_ids, opts.policy)?;
    let mut acc = StatsAccumulator::new(task_ids.to_vec(), opts.want_gram, opts.breakdown);

    for name in base.index().keys() {
        let base_buf = base.read_tensor(name)?;
        if opts.want_gram {
            let mut tvs = Vec::with_capacity(models.len());
            for m in models {
                tvs.push(model_task_vector(m, name, &base_buf)?);
            }
            let views: Vec<&[f64]> = tvs.iter().map(Vec::as_slice).collect();
            acc.add_tensor(name, &views);
        } else {
            let mut partial = Vec::with_capacity(models.len());
            for m in models {
                let tv = model_task_vector(m, name, &base_buf)?;
                partial.push(crate::numeric::sq_norm(&tv));
            }
            acc.add_partial_norms(name, &partial);
        }
    }
    Ok((acc.finish(), coverage))
}

/// Task vector of `model` for tensor `name`; zero when the model lacks it.
pub(crate) fn model_task_vector(model: &CheckpointHandle, name: &str, base: &TensorBuffer) -> Result<Vec<f64>> {
    if !model.contains(name) {
        return Ok(vec![0.0; base.len()]);
    }
    let mut fine = model.read_tensor(name)?.values;
    subtract_base(&mut fine, &base.values);
    Ok(fine)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineMatrix {
    pub task_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

pub fn cosine_matrix(stats: &TaskVectorStats) -> Result<CosineMatrix> {
    let gram = stats
        .gram
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("cosine matrix needs Gram statistics".into()))?;
    if let Some(t) = stats.sq_norms.iter().position(|&s| s <= 0.0) {
        return Err(Error::DegenerateTaskVector(stats.task_ids[t].clone()));
    }
    let n = stats.sq_norms.len();
    let values = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let c = gram[i][j] / (stats.sq_norms[i] * stats.sq_norms[j]).sqrt();
                    c.clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect();
    Ok(CosineMatrix {
        task_ids: stats.task_ids.clone(),
        values,
    })
}

/// JSON export of task-vector statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub tasks: Vec<String>,
    #[serde(serialize_with = "crate::json::vec")]
    pub sq_norms: Vec<f64>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        serialize_with = "crate::json::opt_matrix"
    )]
    pub cosine: Option<Vec<Vec<f64>>>,
}

impl StatsReport {
    pub fn new(stats: &TaskVectorStats, cosine: Option<&CosineMatrix>) -> Self {
        StatsReport {
            tasks: stats.task_ids.clone(),
            sq_norms: stats.sq_norms.clone(),
            cosine: cosine.map(|c| c.values.clone()),
        }
    }

    /// Rebuilds norm-only statistics, e.g. to derive coefficients offline.
    pub fn to_stats(&self) -> Result<TaskVectorStats> {
        if self.tasks.len() != self.sq_norms.len() {
            return Err(Error::InvalidArgument(format!(
                "stats report lists {} tasks but {} norms",
                self.tasks.len(),
                self.sq_norms.len()
            )));
        }
        Ok(TaskVectorStats {
            task_ids: self.tasks.clone(),
            sq_norms: self.sq_norms.clone(),
            gram: None,
            per_tensor_breakdown: None,
        })
    }
}
