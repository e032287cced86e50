use std::fmt;

use half::{bf16, f16};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage dtype of a tensor. Arithmetic never happens in these types;
/// values are widened to `f64` on read and narrowed on write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Dtype {
    F32,
    F16,
    BF16,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 | Dtype::BF16 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "F32",
            Dtype::F16 => "F16",
            Dtype::BF16 => "BF16",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "F32" => Ok(Dtype::F32),
            "F16" => Ok(Dtype::F16),
            "BF16" => Ok(Dtype::BF16),
            other => Err(Error::UnsupportedDtype(other.to_string())),
        }
    }

    /// Decodes little-endian bytes, reporting the first non-finite element.
    pub(crate) fn decode(self, name: &str, bytes: &[u8]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(bytes.len() / self.size());
        for (index, chunk) in bytes.chunks_exact(self.size()).enumerate() {
            let v = match self {
                Dtype::F32 => f64::from(f32::from_le_bytes(chunk.try_into().unwrap())),
                Dtype::F16 => f16::from_le_bytes(chunk.try_into().unwrap()).to_f64(),
                Dtype::BF16 => bf16::from_le_bytes(chunk.try_into().unwrap()).to_f64(),
            };
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    name: name.to_string(),
                    index,
                });
            }
            out.push(v);
        }
        Ok(out)
    }

    /// Narrows and appends `values`. Values that round to infinity are an
    /// error rather than a silent `Inf`.
    pub(crate) fn encode_into(self, name: &str, values: &[f64], out: &mut Vec<u8>) -> Result<()> {
        out.reserve(values.len() * self.size());
        for (index, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    name: name.to_string(),
                    index,
                });
            }
            let overflow = || Error::Overflow {
                name: name.to_string(),
                dtype: self,
                value: v,
            };
            match self {
                Dtype::F32 => {
                    let x = v as f32;
                    if x.is_infinite() {
                        return Err(overflow());
                    }
                    out.extend_from_slice(&x.to_le_bytes());
                }
                Dtype::F16 => {
                    let x = f16::from_f64(v);
                    if x.is_infinite() {
                        return Err(overflow());
                    }
                    out.extend_from_slice(&x.to_le_bytes());
                }
                Dtype::BF16 => {
                    let x = bf16::from_f64(v);
                    if x.is_infinite() {
                        return Err(overflow());
                    }
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
