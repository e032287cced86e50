//! DARE: drop each task-vector element with probability `p` and rescale the
//! survivors by `1 / (1 - p)`, keeping the expectation unchanged.
//!
//! Drops come from a SplitMix64 stream keyed by
//! `seed ^ fnv1a64(tensor_name) ^ (task_index * 0x9E3779B97F4A7C15)`, one draw
//! per element in flat order; element `e` survives iff `draw_e / 2^64 >= p`.

use crate::rng::{stream_seed, SplitMix64};
use crate::store::TensorBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey<'a> {
    pub seed: u64,
    pub task_index: usize,
    pub tensor_name: &'a str,
}

pub fn dare_in_place(values: &mut [f64], p: f64, key: StreamKey<'_>) {
    if p == 0.0 {
        return;
    }
    let scale = 1.0 - p;
    let mut rng = SplitMix64::new(stream_seed(key.seed, key.task_index, key.tensor_name));
    for v in values {
        if rng.next_unit() >= p {
            *v /= scale;
        } else {
            *v = 0.0;
        }
    }
}

pub fn dare_transform(tv: &TensorBuffer, p: f64, key: StreamKey<'_>) -> TensorBuffer {
    let mut out = tv.clone();
    dare_in_place(&mut out.values, p, key);
    out
}
