use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::Deserialize;

use super::{Dtype, TensorBuffer, TensorMeta};
use crate::error::{Error, Result};

const METADATA_KEY: &str = "__metadata__";

/// Upper bound on the JSON header; anything larger is treated as corrupt.
const MAX_HEADER_LEN: u64 = 100 * 1024 * 1024;

/// An open checkpoint. Immutable after opening and shareable across threads;
/// reads use positioned I/O so concurrent `read_tensor` calls do not race on
/// a shared cursor.
#[derive(Debug)]
pub struct CheckpointHandle {
    path: PathBuf,
    file: File,
    index: BTreeMap<String, TensorMeta>,
    metadata: Option<BTreeMap<String, String>>,
    total_params: u64,
    data_start: u64,
    bytes_read: AtomicU64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [u64; 2],
}

/// Header entries in file order, keeping duplicates so they can be reported.
struct RawHeader(Vec<(String, serde_json::Value)>);

impl<'de> Deserialize<'de> for RawHeader {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct HeaderVisitor;

        impl<'de> Visitor<'de> for HeaderVisitor {
            type Value = RawHeader;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object of tensor entries")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<RawHeader, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, serde_json::Value>()? {
                    entries.push((k, v));
                }
                Ok(RawHeader(entries))
            }
        }

        deserializer
            .deserialize_map(HeaderVisitor)
            .map_err(|e: D::Error| de::Error::custom(e))
    }
}

pub fn open_checkpoint(path: impl AsRef<Path>) -> Result<CheckpointHandle> {
    CheckpointHandle::open(path)
}

impl CheckpointHandle {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(&path, e))?.len();

        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes).map_err(|_| {
            Error::MalformedHeader(format!(
                "file is {file_len} bytes, shorter than the 8-byte length prefix"
            ))
        })?;
        let header_len = u64::from_le_bytes(len_bytes);
        if header_len > MAX_HEADER_LEN || header_len > file_len - 8 {
            return Err(Error::MalformedHeader(format!(
                "declared header length {header_len} exceeds file length {file_len}"
            )));
        }

        let mut header = vec![0u8; header_len as usize];
        file.read_exact(&mut header).map_err(|e| Error::io(&path, e))?;
        let data_start = 8 + header_len;
        let data_len = file_len - data_start;

        let raw: RawHeader = serde_json::from_slice(&header)
            .map_err(|e| Error::MalformedHeader(format!("header is not a JSON object: {e}")))?;
        let (index, metadata) = build_index(raw, data_len)?;
        let total_params = index.values().map(|m| m.numel() as u64).sum();

        Ok(CheckpointHandle {
            path,
            file,
            index,
            metadata,
            total_params,
            data_start,
            bytes_read: AtomicU64::new(data_start),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Tensor index, sorted by name.
    pub fn index(&self) -> &BTreeMap<String, TensorMeta> {
        &self.index
    }

    pub fn metadata(&self) -> Option<&BTreeMap<String, String>> {
        self.metadata.as_ref()
    }

    pub fn total_params(&self) -> u64 {
        self.total_params
    }

    pub fn meta(&self, name: &str) -> Option<&TensorMeta> {
        self.index.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Total bytes pulled from disk through this handle, header included.
    pub fn bytes_read(&self) -> u64 {
        self.bytes_read.load(Ordering::Relaxed)
    }

    pub fn read_tensor(&self, name: &str) -> Result<TensorBuffer> {
        let meta = self
            .index
            .get(name)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))?;
        let len = (meta.byte_range.end - meta.byte_range.start) as usize;
        let mut bytes = vec![0u8; len];
        self.read_at(self.data_start + meta.byte_range.start, &mut bytes)?;
        self.bytes_read.fetch_add(len as u64, Ordering::Relaxed);
        let values = meta.dtype.decode(name, &bytes)?;
        Ok(TensorBuffer {
            name: meta.name.clone(),
            shape: meta.shape.clone(),
            values,
        })
    }

    #[cfg(unix)]
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> Result<()> {
        use std::os::unix::fs::FileExt;
        self.file
            .read_exact_at(buf, offset)
            .map_err(|e| Error::io(&self.path, e))
    }

    #[cfg(not(unix))]
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> Result<()> {
        use std::io::{Seek, SeekFrom};
        let mut f = File::open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        f.seek(SeekFrom::Start(offset))
            .and_then(|_| f.read_exact(buf))
            .map_err(|e| Error::io(&self.path, e))
    }
}

type Index = (BTreeMap<String, TensorMeta>, Option<BTreeMap<String, String>>);

fn build_index(raw: RawHeader, data_len: u64) -> Result<Index> {
    let mut index = BTreeMap::new();
    let mut metadata = None;

    for (name, value) in raw.0 {
        if name == METADATA_KEY {
            if metadata.is_some() {
                return Err(Error::DuplicateName(name));
            }
            let map: BTreeMap<String, String> = serde_json::from_value(value)
                .map_err(|e| Error::MalformedHeader(format!("__metadata__ must map strings to strings: {e}")))?;
            metadata = Some(map);
            continue;
        }
        let entry: RawEntry =
            serde_json::from_value(value).map_err(|e| Error::MalformedHeader(format!("entry {name:?}: {e}")))?;
        let dtype = Dtype::from_tag(&entry.dtype)?;
        let [begin, end] = entry.data_offsets;
        if begin > end {
            return Err(Error::MalformedHeader(format!(
                "entry {name:?}: data_offsets [{begin}, {end}] are reversed"
            )));
        }
        let expected = entry
            .shape
            .iter()
            .try_fold(dtype.size() as u64, |acc, &d| acc.checked_mul(d as u64))
            .ok_or_else(|| Error::MalformedHeader(format!("entry {name:?}: shape overflows")))?;
        if end - begin != expected {
            return Err(Error::MalformedHeader(format!(
                "entry {name:?}: {} bytes declared, shape {:?} of {dtype} needs {expected}",
                end - begin,
                entry.shape
            )));
        }
        if end > data_len {
            return Err(Error::TruncatedPayload {
                name,
                end,
                available: data_len,
            });
        }
        let meta = TensorMeta {
            name: name.clone(),
            dtype,
            shape: entry.shape,
            byte_range: begin..end,
        };
        if index.insert(name.clone(), meta).is_some() {
            return Err(Error::DuplicateName(name));
        }
    }

    if index.is_empty() {
        return Err(Error::EmptyCheckpoint);
    }

    let mut by_offset: Vec<&TensorMeta> = index.values().filter(|m| !m.byte_range.is_empty()).collect();
    by_offset.sort_by_key(|m| (m.byte_range.start, m.byte_range.end));
    for pair in by_offset.windows(2) {
        if pair[1].byte_range.start < pair[0].byte_range.end {
            return Err(Error::OverlappingRanges {
                first: pair[0].name.clone(),
                second: pair[1].name.clone(),
            });
        }
    }

    Ok((index, metadata))
}
