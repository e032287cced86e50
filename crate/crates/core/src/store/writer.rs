use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use tempfile::NamedTempFile;

use super::{numel, Dtype, TensorBuffer, TensorMeta};
use crate::error::{Error, Result};

/// Name, dtype and shape of a tensor to be written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorPlan {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
}

#[derive(Serialize)]
struct EntryOut<'a> {
    dtype: Dtype,
    shape: &'a [usize],
    data_offsets: [u64; 2],
}

struct HeaderOut<'a> {
    metadata: Option<&'a BTreeMap<String, String>>,
    entries: &'a [TensorMeta],
}

impl Serialize for HeaderOut<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(None)?;
        if let Some(md) = self.metadata {
            map.serialize_entry("__metadata__", md)?;
        }
        for m in self.entries {
            map.serialize_entry(
                &m.name,
                &EntryOut {
                    dtype: m.dtype,
                    shape: &m.shape,
                    data_offsets: [m.byte_range.start, m.byte_range.end],
                },
            )?;
        }
        map.end()
    }
}

/// Streaming writer. The full layout is fixed up front from a plan, so
/// tensors can be produced one at a time and dropped after writing.
///
/// Data lands in a temporary file next to the target and is renamed into
/// place by [`CheckpointWriter::finish`]; dropping the writer early removes
/// the temporary and leaves nothing at the target path.
pub struct CheckpointWriter {
    target: PathBuf,
    tmp: NamedTempFile,
    out: BufWriter<File>,
    layout: Vec<TensorMeta>,
    next: usize,
    scratch: Vec<u8>,
    bytes_written: u64,
}

impl CheckpointWriter {
    /// Plans are sorted by name; data offsets are contiguous in that order.
    pub fn create(
        path: impl AsRef<Path>,
        mut plan: Vec<TensorPlan>,
        metadata: Option<&BTreeMap<String, String>>,
    ) -> Result<Self> {
        let target = path.as_ref().to_path_buf();
        plan.sort_by(|a, b| a.name.cmp(&b.name));
        if let Some(w) = plan.windows(2).find(|w| w[0].name == w[1].name) {
            return Err(Error::DuplicateName(w[0].name.clone()));
        }
        if plan.is_empty() {
            return Err(Error::EmptyCheckpoint);
        }
        if plan.iter().any(|p| p.name == "__metadata__") {
            return Err(Error::InvalidArgument("tensor name __metadata__ is reserved".into()));
        }

        let mut offset = 0u64;
        let layout: Vec<TensorMeta> = plan
            .into_iter()
            .map(|p| {
                let len = (numel(&p.shape) * p.dtype.size()) as u64;
                let meta = TensorMeta {
                    name: p.name,
                    dtype: p.dtype,
                    shape: p.shape,
                    byte_range: offset..offset + len,
                };
                offset += len;
                meta
            })
            .collect();

        let mut header = serde_json::to_vec(&HeaderOut {
            metadata,
            entries: &layout,
        })?;
        // Pad with spaces so the data section starts 8-byte aligned.
        while (8 + header.len()) % 8 != 0 {
            header.push(b' ');
        }

        let dir = match target.parent() {
            Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let tmp = NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
        let file = tmp.as_file().try_clone().map_err(|e| Error::io(tmp.path(), e))?;
        let mut out = BufWriter::new(file);
        out.write_all(&(header.len() as u64).to_le_bytes())
            .and_then(|_| out.write_all(&header))
            .map_err(|e| Error::io(tmp.path(), e))?;

        Ok(CheckpointWriter {
            target,
            tmp,
            out,
            layout,
            next: 0,
            scratch: Vec::new(),
            bytes_written: 8 + header.len() as u64,
        })
    }

    pub fn layout(&self) -> &[TensorMeta] {
        &self.layout
    }

    /// Name of the next tensor the writer expects, if any.
    pub fn expected_next(&self) -> Option<&str> {
        self.layout.get(self.next).map(|m| m.name.as_str())
    }

    /// Writes the next tensor in sorted-name order.
    pub fn write_tensor(&mut self, name: &str, shape: &[usize], values: &[f64]) -> Result<()> {
        let meta = self.layout.get(self.next).ok_or_else(|| {
            Error::InvalidArgument(format!("tensor {name:?} written after the planned set was complete"))
        })?;
        if meta.name != name {
            return Err(Error::InvalidArgument(format!(
                "expected tensor {:?} next, got {name:?}",
                meta.name
            )));
        }
        if meta.shape != shape {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                left: meta.shape.clone(),
                right: shape.to_vec(),
            });
        }
        if values.len() != meta.numel() {
            return Err(Error::LengthMismatch {
                name: name.to_string(),
                shape: shape.to_vec(),
                len: values.len(),
            });
        }
        self.scratch.clear();
        meta.dtype.encode_into(name, values, &mut self.scratch)?;
        self.out
            .write_all(&self.scratch)
            .map_err(|e| Error::io(self.tmp.path(), e))?;
        self.bytes_written += self.scratch.len() as u64;
        self.next += 1;
        Ok(())
    }

    /// Flushes and atomically moves the file into place. Returns bytes written.
    pub fn finish(mut self) -> Result<u64> {
        if self.next != self.layout.len() {
            return Err(Error::InvalidArgument(format!(
                "only {} of {} planned tensors were written",
                self.next,
                self.layout.len()
            )));
        }
        self.out.flush().map_err(|e| Error::io(self.tmp.path(), e))?;
        drop(self.out);
        self.tmp
            .persist(&self.target)
            .map_err(|e| Error::io(&self.target, e.error))?;
        Ok(self.bytes_written)
    }
}

/// Writes a whole checkpoint in one call. Names must be unique; the output is
/// byte-identical for equal inputs regardless of the order of `tensors`.
pub fn write_checkpoint(
    path: impl AsRef<Path>,
    tensors: &[TensorBuffer],
    dtype: Dtype,
    metadata: Option<&BTreeMap<String, String>>,
) -> Result<()> {
    let plan = tensors
        .iter()
        .map(|t| TensorPlan {
            name: t.name.clone(),
            dtype,
            shape: t.shape.clone(),
        })
        .collect();
    let mut writer = CheckpointWriter::create(path, plan, metadata)?;
    let by_name: BTreeMap<&str, &TensorBuffer> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    for t in by_name.values() {
        writer.write_tensor(&t.name, &t.shape, &t.values)?;
    }
    writer.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::open_checkpoint;

    fn buf(name: &str, shape: Vec<usize>, values: Vec<f64>) -> TensorBuffer {
        TensorBuffer::new(name, shape, values).unwrap()
    }

    #[test]
    fn round_trip_single_value() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.safetensors");
        write_checkpoint(&p, &[buf("w", vec![1], vec![3.0])], Dtype::F32, None).unwrap();
        let h = open_checkpoint(&p).unwrap();
        assert_eq!(h.read_tensor("w").unwrap().values, vec![3.0]);
    }

    #[test]
    fn deterministic_bytes_independent_of_input_order() {
        let dir = tempfile::tempdir().unwrap();
        let a = buf("a", vec![2], vec![1.0, 2.0]);
        let b = buf("b", vec![1], vec![-1.0]);
        let mut md = BTreeMap::new();
        md.insert("k".to_string(), "v".to_string());
        let p1 = dir.path().join("1");
        let p2 = dir.path().join("2");
        write_checkpoint(&p1, &[a.clone(), b.clone()], Dtype::BF16, Some(&md)).unwrap();
        write_checkpoint(&p2, &[b, a], Dtype::BF16, Some(&md)).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn layout_is_contiguous_in_name_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        let tensors = [buf("z", vec![3], vec![0.0; 3]), buf("a", vec![2, 2], vec![0.0; 4])];
        write_checkpoint(&p, &tensors, Dtype::F16, None).unwrap();
        let h = open_checkpoint(&p).unwrap();
        assert_eq!(h.meta("a").unwrap().byte_range, 0..8);
        assert_eq!(h.meta("z").unwrap().byte_range, 8..14);
        let bytes = std::fs::read(&p).unwrap();
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        assert_eq!((8 + header_len) % 8, 0);
    }

    #[test]
    fn overflow_leaves_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        let err = write_checkpoint(&p, &[buf("w", vec![1], vec![70000.0])], Dtype::F16, None).unwrap_err();
        assert!(err.to_string().contains("overflow for dtype"));
        assert!(!p.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn duplicate_names_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = buf("w", vec![1], vec![1.0]);
        let err = write_checkpoint(dir.path().join("x"), &[t.clone(), t], Dtype::F32, None).unwrap_err();
        assert!(matches!(err, Error::DuplicateName(_)));
    }

    #[test]
    fn writer_enforces_plan_order() {
        let dir = tempfile::tempdir().unwrap();
        let plan = vec![
            TensorPlan {
                name: "b".into(),
                dtype: Dtype::F32,
                shape: vec![1],
            },
            TensorPlan {
                name: "a".into(),
                dtype: Dtype::F32,
                shape: vec![1],
            },
        ];
        let mut w = CheckpointWriter::create(dir.path().join("x"), plan, None).unwrap();
        assert_eq!(w.expected_next(), Some("a"));
        assert!(w.write_tensor("b", &[1], &[1.0]).is_err());
        w.write_tensor("a", &[1], &[1.0]).unwrap();
        assert!(w.write_tensor("b", &[2], &[1.0, 2.0]).is_err());
        w.write_tensor("b", &[1], &[2.0]).unwrap();
        w.finish().unwrap();
    }
}
