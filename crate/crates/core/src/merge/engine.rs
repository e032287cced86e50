use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::dare::{dare_in_place, StreamKey};
use super::gauge::{BufferGauge, Tracked};
use super::recipe::{MergeMethod, MergeRecipe, NormSource, OutputDtype, TiesScope, Transform};
use super::ties::{
    apply_global_cut, disjoint_merge_add, elect_sign, kept_count, trim_in_place, GlobalCut, RadixSelect,
};
use crate::coefficients::{fixed_coefficients, metagpt_coefficients, weight_average_coefficients, CoefficientSet};
use crate::error::{Error, Result};
use crate::numeric::sq_norm;
use crate::store::{open_checkpoint, CheckpointHandle, CheckpointWriter, TensorPlan};
use crate::task_vectors::{check_coverage, model_task_vector, KeyPolicy, TaskVectorStats};

#[derive(Debug, Clone, Serialize)]
pub struct MergeReport {
    pub recipe: MergeRecipe,
    pub coefficients: CoefficientSet,
    pub raw_sq_norms: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transformed_sq_norms: Option<Vec<f64>>,
    pub tensor_count: usize,
    pub total_params: u64,
    pub missing: BTreeMap<String, Vec<String>>,
    pub skipped: Vec<String>,
    /// Most tensor buffers alive at once during the run.
    pub peak_live_buffers: usize,
    pub bytes_written: u64,
    /// Wall time; kept out of the JSON so reports are reproducible.
    #[serde(skip)]
    pub elapsed: Duration,
}

/// Runs merge recipes while counting live tensor buffers.
#[derive(Debug, Default)]
pub struct MergeEngine {
    gauge: BufferGauge,
    fail_after: Option<usize>,
}

impl MergeEngine {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fault injection for tests: abort after writing `n` tensors.
    #[doc(hidden)]
    pub fn fail_after_tensors(mut self, n: usize) -> Self {
        self.fail_after = Some(n);
        self
    }

    pub fn gauge(&self) -> &BufferGauge {
        &self.gauge
    }

    pub fn run(&self, recipe: &MergeRecipe) -> Result<MergeReport> {
        let start = Instant::now();
        recipe.validate()?;
        if recipe.tasks.iter().any(|t| t.path == recipe.output) || recipe.base == recipe.output {
            return Err(Error::InvalidRecipe("output path must differ from every input".into()));
        }

        let base = open_checkpoint(&recipe.base)?;
        let models = recipe
            .tasks
            .iter()
            .map(|t| open_checkpoint(&t.path))
            .collect::<Result<Vec<_>>>()?;
        let model_refs: Vec<&CheckpointHandle> = models.iter().collect();
        let task_ids = recipe.task_ids();
        let policy = if recipe.strict_keys {
            KeyPolicy::Strict
        } else {
            KeyPolicy::Lenient
        };
        let coverage = check_coverage(&base, &model_refs, &task_ids, policy)?;

        let mut pipeline = Pipeline {
            base: &base,
            models: &model_refs,
            transform: recipe.transform,
            density: recipe.ties_density,
            dare_p: recipe.dare_p,
            seed: recipe.seed,
            gauge: &self.gauge,
            cuts: None,
            quotas: RefCell::new(Vec::new()),
        };
        if recipe.transform == Transform::Ties && recipe.ties_scope == TiesScope::Global {
            pipeline.cuts = pipeline.global_cuts()?;
        }

        let (raw, transformed) = pipeline.norms()?;
        let norms_for_coeffs = match (recipe.transform, recipe.norm_source) {
            (Transform::None, _) | (_, NormSource::Raw) => &raw,
            _ => &transformed,
        };
        let coefficients = match recipe.method {
            MergeMethod::WeightAverage => weight_average_coefficients(task_ids.clone())?,
            MergeMethod::TaskArithmeticFixed => fixed_coefficients(task_ids.clone(), recipe.fixed_lambda)?,
            MergeMethod::MetaGpt => metagpt_coefficients(&TaskVectorStats {
                task_ids: task_ids.clone(),
                sq_norms: norms_for_coeffs.clone(),
                gram: None,
                per_tensor_breakdown: None,
            })?,
        };

        let metadata = output_metadata(recipe, &coefficients)?;
        let bytes_written = pipeline.merge_to(
            &recipe.output,
            recipe.output_dtype,
            &coefficients.lambdas,
            Some(&metadata),
            self.fail_after,
        )?;

        Ok(MergeReport {
            recipe: recipe.clone(),
            coefficients,
            raw_sq_norms: raw,
            transformed_sq_norms: (recipe.transform != Transform::None).then_some(transformed),
            tensor_count: base.index().len(),
            total_params: base.total_params(),
            missing: coverage.missing,
            skipped: coverage.skipped,
            peak_live_buffers: self.gauge.peak(),
            bytes_written,
            elapsed: start.elapsed(),
        })
    }
}

pub fn run_recipe(recipe: &MergeRecipe) -> Result<MergeReport> {
    MergeEngine::new().run(recipe)
}

/// Plain task arithmetic, `base + Σ λ_t (model_t - base)`, written to
/// `output`. Returns a handle on the written checkpoint.
pub fn task_arithmetic_merge(
    base: &CheckpointHandle,
    models: &[&CheckpointHandle],
    coeffs: &CoefficientSet,
    output: impl AsRef<Path>,
    output_dtype: OutputDtype,
    policy: KeyPolicy,
) -> Result<CheckpointHandle> {
    if coeffs.len() != models.len() {
        return Err(Error::InvalidArgument(format!(
            "{} coefficients for {} models",
            coeffs.len(),
            models.len()
        )));
    }
    check_coverage(base, models, &coeffs.task_ids, policy)?;
    let gauge = BufferGauge::new();
    let pipeline = Pipeline {
        base,
        models,
        transform: Transform::None,
        density: 1.0,
        dare_p: 0.0,
        seed: 0,
        gauge: &gauge,
        cuts: None,
        quotas: RefCell::new(Vec::new()),
    };
    pipeline.merge_to(output.as_ref(), output_dtype, &coeffs.lambdas, None, None)?;
    open_checkpoint(output)
}

fn output_metadata(recipe: &MergeRecipe, coeffs: &CoefficientSet) -> Result<BTreeMap<String, String>> {
    let mut md = BTreeMap::new();
    md.insert(
        "merge_method".to_string(),
        serde_json::to_value(recipe.method)?
            .as_str()
            .unwrap_or_default()
            .to_string(),
    );
    md.insert(
        "transform".to_string(),
        serde_json::to_value(recipe.transform)?
            .as_str()
            .unwrap_or_default()
            .to_string(),
    );
    md.insert("lambdas".to_string(), serde_json::to_string(&coeffs.lambdas)?);
    Ok(md)
}

struct Pipeline<'a> {
    base: &'a CheckpointHandle,
    models: &'a [&'a CheckpointHandle],
    transform: Transform,
    density: f64,
    dare_p: f64,
    seed: u64,
    gauge: &'a BufferGauge,
    /// Per-task cuts for global TIES; `None` trims tensor by tensor.
    cuts: Option<Vec<GlobalCut>>,
    /// Tie quotas left in the current pass, one per task.
    quotas: RefCell<Vec<usize>>,
}

impl Pipeline<'_> {
    fn apply_transform(&self, tv: &mut [f64], task_index: usize, name: &str) {
        match self.transform {
            Transform::None => {}
            Transform::Ties => match &self.cuts {
                Some(cuts) => apply_global_cut(tv, cuts[task_index], &mut self.quotas.borrow_mut()[task_index]),
                None => trim_in_place(tv, self.density),
            },
            Transform::Dare => dare_in_place(
                tv,
                self.dare_p,
                StreamKey {
                    seed: self.seed,
                    task_index,
                    tensor_name: name,
                },
            ),
        }
    }

    fn reset_quotas(&self) {
        if let Some(cuts) = &self.cuts {
            *self.quotas.borrow_mut() = cuts.iter().map(|c| c.equal_quota).collect();
        }
    }

    /// Exact whole-model magnitude cut per task, found by radix selection
    /// over repeated streaming passes. `None` when nothing would be trimmed.
    fn global_cuts(&self) -> Result<Option<Vec<GlobalCut>>> {
        let n = self.base.total_params() as usize;
        let k = kept_count(self.density, n);
        if k >= n {
            return Ok(None);
        }
        let mut selects = vec![RadixSelect::new(k); self.models.len()];
        let mut cuts = Vec::new();
        for _ in 0..RadixSelect::PASSES {
            for name in self.base.index().keys() {
                let base_buf = self.gauge.track(self.base.read_tensor(name)?);
                for (sel, m) in selects.iter_mut().zip(self.models) {
                    let tv = self.gauge.track(model_task_vector(m, name, &base_buf)?);
                    sel.observe(&tv);
                }
            }
            cuts = selects.iter_mut().filter_map(RadixSelect::finish_pass).collect();
        }
        Ok(Some(cuts))
    }

    /// Raw and transformed squared norms per task, one task vector at a time.
    fn norms(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        self.reset_quotas();
        let t = self.models.len();
        let mut raw = vec![0.0; t];
        let mut transformed = vec![0.0; t];
        for name in self.base.index().keys() {
            let base_buf = self.gauge.track(self.base.read_tensor(name)?);
            for (i, m) in self.models.iter().enumerate() {
                let mut tv = self.gauge.track(model_task_vector(m, name, &base_buf)?);
                raw[i] += sq_norm(&tv);
                self.apply_transform(&mut tv, i, name);
                transformed[i] += sq_norm(&tv);
            }
        }
        Ok((raw, transformed))
    }

    /// Second pass: combine per tensor name and stream into the output file.
    /// Live buffers per name: the base (reused as output), `T` task vectors,
    /// and for TIES the elected signs.
    fn merge_to(
        &self,
        output: &Path,
        output_dtype: OutputDtype,
        lambdas: &[f64],
        metadata: Option<&BTreeMap<String, String>>,
        fail_after: Option<usize>,
    ) -> Result<u64> {
        let plan = self
            .base
            .index()
            .values()
            .map(|m| TensorPlan {
                name: m.name.clone(),
                dtype: output_dtype.resolve(m.dtype),
                shape: m.shape.clone(),
            })
            .collect();
        let mut writer = CheckpointWriter::create(output, plan, metadata)?;
        self.reset_quotas();

        for (written, name) in self.base.index().keys().enumerate() {
            if fail_after == Some(written) {
                return Err(Error::Aborted(format!("injected failure before tensor {name:?}")));
            }
            let mut out = self.gauge.track(self.base.read_tensor(name)?);
            let mut tvs: Vec<Tracked<Vec<f64>>> = Vec::with_capacity(self.models.len());
            for (i, m) in self.models.iter().enumerate() {
                let mut tv = self.gauge.track(model_task_vector(m, name, &out)?);
                self.apply_transform(&mut tv, i, name);
                tvs.push(tv);
            }
            let views: Vec<&[f64]> = tvs.iter().map(|t| t.as_slice()).collect();

            match self.transform {
                Transform::Ties => {
                    let signs = self.gauge.track(elect_sign(&views, lambdas));
                    disjoint_merge_add(&views, &signs, lambdas, &mut out.values);
                }
                Transform::None | Transform::Dare => {
                    for (e, o) in out.values.iter_mut().enumerate() {
                        let acc = views.iter().zip(lambdas).fold(0.0, |acc, (v, l)| acc + l * v[e]);
                        *o += acc;
                    }
                }
            }
            writer.write_tensor(name, &out.shape, &out.values)?;
        }
        writer.finish()
    }
}
