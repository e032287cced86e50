//! Streaming task-arithmetic merges with optional TIES or DARE transforms.

pub mod dare;
mod engine;
mod gauge;
mod recipe;
pub mod ties;

pub use dare::{dare_transform, StreamKey};
pub use engine::{run_recipe, task_arithmetic_merge, MergeEngine, MergeReport};
pub use gauge::{BufferGauge, Tracked};
pub use recipe::{MergeMethod, MergeRecipe, NormSource, OutputDtype, TaskEntry, TiesScope, Transform};
pub use ties::{ties_disjoint_merge, ties_elect_sign, ties_trim};
