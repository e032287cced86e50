//! Synthetic checkpoint fixtures shared by the benchmarks.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskmerge_core::merge::TaskEntry;
use taskmerge_core::{write_checkpoint, Dtype, MergeMethod, MergeRecipe, Result, TensorBuffer, Transform};

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub base: PathBuf,
    pub models: Vec<PathBuf>,
}

impl Fixture {
    pub fn recipe(&self, method: MergeMethod, transform: Transform) -> MergeRecipe {
        let tasks = self
            .models
            .iter()
            .enumerate()
            .map(|(i, p)| TaskEntry {
                id: format!("task{i}"),
                path: p.clone(),
            })
            .collect();
        let mut r = MergeRecipe::new(&self.base, tasks, method, self.dir.path().join("merged.ckpt"));
        r.transform = transform;
        r
    }
}

pub fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn write(path: &Path, tensors: &[(String, Vec<f64>)], dtype: Dtype) -> Result<()> {
    let bufs = tensors
        .iter()
        .map(|(name, v)| TensorBuffer::new(name.clone(), vec![v.len()], v.clone()))
        .collect::<Result<Vec<_>>>()?;
    write_checkpoint(path, &bufs, dtype, None)
}

/// A base and `tasks` fine-tuned checkpoints with `tensors` tensors of
/// `numel` elements each.
pub fn synthetic(tensors: usize, numel: usize, tasks: usize, dtype: Dtype, seed: u64) -> Result<Fixture> {
    let dir = tempfile::tempdir().map_err(|e| taskmerge_core::Error::Io {
        path: std::env::temp_dir(),
        source: e,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<(String, Vec<f64>)> = (0..tensors)
        .map(|i| (format!("layers.{i:03}.weight"), random_values(&mut rng, numel)))
        .collect();
    let base_path = dir.path().join("base.ckpt");
    write(&base_path, &base, dtype)?;
    let mut models = Vec::with_capacity(tasks);
    for t in 0..tasks {
        let fine: Vec<(String, Vec<f64>)> = base
            .iter()
            .map(|(name, v)| {
                let delta = random_values(&mut rng, v.len());
                (name.clone(), v.iter().zip(delta).map(|(b, d)| b + 0.01 * d).collect())
            })
            .collect();
        let p = dir.path().join(format!("task{t}.ckpt"));
        write(&p, &fine, dtype)?;
        models.push(p);
    }
    Ok(Fixture {
        dir,
        base: base_path,
        models,
    })
}
