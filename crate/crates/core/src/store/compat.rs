use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{CheckpointHandle, Dtype};

/// Shapes (or dtypes) seen for one name, indexed like the input handles;
/// `None` where the handle lacks the name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShapeConflict {
    pub name: String,
    pub shapes: Vec<Option<Vec<usize>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct KeyReport {
    /// Names present in every checkpoint.
    pub common: Vec<String>,
    /// Name -> indices of the checkpoints lacking it.
    pub missing: BTreeMap<String, Vec<usize>>,
    pub shape_mismatch: Vec<ShapeConflict>,
    /// Common names whose storage dtype differs. Informational only.
    pub dtype_mismatch: BTreeMap<String, Vec<Dtype>>,
}

impl KeyReport {
    pub fn is_clean(&self) -> bool {
        self.missing.is_empty() && self.shape_mismatch.is_empty()
    }
}

pub fn validate_compatibility(handles: &[&CheckpointHandle]) -> KeyReport {
    let all: BTreeSet<&str> = handles
        .iter()
        .flat_map(|h| h.index().keys().map(String::as_str))
        .collect();

    let mut report = KeyReport::default();
    for name in all {
        let metas: Vec<_> = handles.iter().map(|h| h.meta(name)).collect();
        let lacking: Vec<usize> = metas
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.is_none().then_some(i))
            .collect();

        let present: Vec<_> = metas.iter().flatten().collect();
        if present.windows(2).any(|w| w[0].shape != w[1].shape) {
            report.shape_mismatch.push(ShapeConflict {
                name: name.to_string(),
                shapes: metas.iter().map(|m| m.map(|m| m.shape.clone())).collect(),
            });
        }

        if lacking.is_empty() {
            report.common.push(name.to_string());
            if present.windows(2).any(|w| w[0].dtype != w[1].dtype) {
                report
                    .dtype_mismatch
                    .insert(name.to_string(), present.iter().map(|m| m.dtype).collect());
            }
        } else {
            report.missing.insert(name.to_string(), lacking);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{open_checkpoint, write_checkpoint, TensorBuffer};

    fn write(dir: &std::path::Path, file: &str, tensors: &[(&str, Vec<usize>)]) -> CheckpointHandle {
        let bufs: Vec<_> = tensors
            .iter()
            .map(|(n, s)| TensorBuffer::zeros(*n, s.clone()))
            .collect();
        let p = dir.join(file);
        write_checkpoint(&p, &bufs, Dtype::F32, None).unwrap();
        open_checkpoint(p).unwrap()
    }

    #[test]
    fn identical_indices_are_clean() {
        let d = tempfile::tempdir().unwrap();
        let a = write(d.path(), "a", &[("w", vec![2, 2]), ("lm_head", vec![3])]);
        let b = write(d.path(), "b", &[("w", vec![2, 2]), ("lm_head", vec![3])]);
        let r = validate_compatibility(&[&a, &b]);
        assert!(r.is_clean());
        assert!(r.dtype_mismatch.is_empty());
        assert_eq!(r.common, vec!["lm_head", "w"]);
    }

    #[test]
    fn missing_name_is_listed() {
        let d = tempfile::tempdir().unwrap();
        let a = write(d.path(), "a", &[("w", vec![2]), ("lm_head", vec![3])]);
        let b = write(d.path(), "b", &[("w", vec![2])]);
        let r = validate_compatibility(&[&a, &b]);
        assert_eq!(r.missing["lm_head"], vec![1]);
        assert_eq!(r.common, vec!["w"]);
    }

    #[test]
    fn shape_mismatch_is_listed() {
        let d = tempfile::tempdir().unwrap();
        let a = write(d.path(), "a", &[("w", vec![2, 2])]);
        let b = write(d.path(), "b", &[("w", vec![4])]);
        let r = validate_compatibility(&[&a, &b]);
        assert_eq!(r.shape_mismatch.len(), 1);
        assert_eq!(r.shape_mismatch[0].shapes, vec![Some(vec![2, 2]), Some(vec![4])]);
    }
}
