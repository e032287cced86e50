use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coefficients::DEFAULT_FIXED_LAMBDA;
use crate::error::{Error, Result};
use crate::store::Dtype;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMethod {
    WeightAverage,
    TaskArithmeticFixed,
    #[serde(rename = "metagpt")]
    MetaGpt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    None,
    Ties,
    Dare,
}

/// Which task vectors feed the closed-form norms when a transform is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormSource {
    Raw,
    #[default]
    Transformed,
}

/// Population over which TIES ranks magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiesScope {
    /// Keep the top fraction of each tensor separately.
    #[default]
    PerTensor,
    /// Keep the top fraction of the whole task vector, in flat order over
    /// sorted tensor names.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OutputDtype {
    /// Keep each tensor's dtype from the base checkpoint.
    #[default]
    #[serde(rename = "base")]
    Base,
    #[serde(alias = "f32")]
    F32,
}

impl OutputDtype {
    pub fn resolve(self, base: Dtype) -> Dtype {
        match self {
            OutputDtype::Base => base,
            OutputDtype::F32 => Dtype::F32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeRecipe {
    pub base: PathBuf,
    pub tasks: Vec<TaskEntry>,
    pub method: MergeMethod,
    #[serde(default)]
    pub transform: Transform,
    #[serde(default = "default_density")]
    pub ties_density: f64,
    #[serde(default)]
    pub ties_scope: TiesScope,
    #[serde(default = "default_dare_p")]
    pub dare_p: f64,
    #[serde(default = "default_fixed_lambda")]
    pub fixed_lambda: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub strict_keys: bool,
    #[serde(default)]
    pub norm_source: NormSource,
    pub output: PathBuf,
    #[serde(default)]
    pub output_dtype: OutputDtype,
}

fn default_density() -> f64 {
    0.55
}

fn default_dare_p() -> f64 {
    0.5
}

fn default_fixed_lambda() -> f64 {
    DEFAULT_FIXED_LAMBDA
}

fn default_true() -> bool {
    true
}

impl MergeRecipe {
    /// A recipe with every optional knob at its default.
    pub fn new(
        base: impl Into<PathBuf>,
        tasks: Vec<TaskEntry>,
        method: MergeMethod,
        output: impl Into<PathBuf>,
    ) -> Self {
        MergeRecipe {
            base: base.into(),
            tasks,
            method,
            transform: Transform::None,
            ties_density: default_density(),
            ties_scope: TiesScope::default(),
            dare_p: default_dare_p(),
            fixed_lambda: default_fixed_lambda(),
            seed: 0,
            strict_keys: true,
            norm_source: NormSource::default(),
            output: output.into(),
            output_dtype: OutputDtype::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let recipe: MergeRecipe = serde_json::from_str(text).map_err(|e| Error::InvalidRecipe(e.to_string()))?;
        recipe.validate()?;
        Ok(recipe)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidRecipe(msg));
        if self.tasks.is_empty() {
            return bad("tasks must be non-empty".into());
        }
        let mut seen = BTreeSet::new();
        for t in &self.tasks {
            if !seen.insert(t.id.as_str()) {
                return bad(format!("duplicate task id {:?}", t.id));
            }
        }
        if !(self.ties_density > 0.0 && self.ties_density <= 1.0) {
            return bad(format!(
                "ties_density out of range: {} is not in (0, 1]",
                self.ties_density
            ));
        }
        if !(self.dare_p >= 0.0 && self.dare_p < 1.0) {
            return bad(format!("dare_p out of range: {} is not in [0, 1)", self.dare_p));
        }
        if !self.fixed_lambda.is_finite() {
            return bad(format!("fixed_lambda {} is not finite", self.fixed_lambda));
        }
        Ok(())
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.id.clone()).collect()
    }
}
