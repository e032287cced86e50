//! Checkpoint container: an 8-byte little-endian header length, a JSON
//! header mapping tensor names to `{dtype, shape, data_offsets}`, then the
//! raw little-endian data section.
//!
//! Opening a checkpoint reads only the header. Tensor payloads are fetched on
//! demand by [`CheckpointHandle::read_tensor`].

mod compat;
mod dtype;
mod reader;
mod writer;

use std::ops::Range;

pub use compat::{validate_compatibility, KeyReport, ShapeConflict};
pub use dtype::Dtype;
pub use reader::{open_checkpoint, CheckpointHandle};
pub use writer::{write_checkpoint, CheckpointWriter, TensorPlan};

use crate::error::{Error, Result};

/// Location and layout of one tensor inside a checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorMeta {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Half-open range relative to the start of the data section.
    pub byte_range: Range<u64>,
}

impl TensorMeta {
    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// A tensor materialized in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBuffer {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl TensorBuffer {
    /// Builds a buffer, checking the element count and finiteness.
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if numel(&shape) != values.len() {
            return Err(Error::LengthMismatch {
                name,
                shape,
                len: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { name, index });
        }
        Ok(TensorBuffer { name, shape, values })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        TensorBuffer {
            name: name.into(),
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
