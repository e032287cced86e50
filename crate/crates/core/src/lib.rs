//! Model-exclusive task arithmetic.
//!
//! Merges fine-tuned checkpoints into their shared base as
//! `θ = θ₀ + Σ_t λ_t (θ_t − θ₀)`, with coefficients computed in closed form
//! from squared task-vector norms alone. Everything streams tensor by tensor
//! so checkpoints never have to fit in memory.
//!
//! - [`store`]: the checkpoint container (read lazily, write deterministically)
//! - [`task_vectors`]: streaming norms, Gram matrix and cosine diagnostics
//! - [`coefficients`]: closed-form, fixed and averaging coefficients
//! - [`merge`]: the merge engine with TIES and DARE transforms
//! - [`theory`]: synthetic quadratic ensembles and verification suites

pub mod coefficients;
pub mod error;
mod json;
pub mod merge;
pub mod numeric;
pub mod rng;
pub mod store;
pub mod task_vectors;
pub mod theory;

pub use coefficients::{
    fixed_coefficients, metagpt_coefficients, weight_average_coefficients, CoefficientMethod, CoefficientSet,
};
pub use error::{Error, Result};
pub use merge::{run_recipe, MergeMethod, MergeRecipe, MergeReport, NormSource, OutputDtype, Transform};
pub use store::{open_checkpoint, write_checkpoint, CheckpointHandle, Dtype, TensorBuffer};
pub use task_vectors::{compute_stats, cosine_matrix, KeyPolicy, StatsOptions, StatsReport, TaskVectorStats};
