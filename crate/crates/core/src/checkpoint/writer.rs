use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::{dtype, TensorRecord};
use crate::error::CheckpointError;

/// File name used for the shard index of multi-file checkpoints.
pub const INDEX_FILE_NAME: &str = "model.safetensors.index.json";

#[derive(Serialize)]
struct HeaderEntry<'a> {
    dtype: &'a str,
    shape: &'a [usize],
    data_offsets: [u64; 2],
}

/// Writes `tensors` to a single container file.
///
/// Tensors are laid out contiguously in sorted name order and the header
/// keys are sorted, so identical inputs give identical bytes. Values are
/// rounded to each record's storage dtype.
pub fn write_fixture(
    tensors: &[TensorRecord],
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };

    let mut by_name: BTreeMap<&str, &TensorRecord> = BTreeMap::new();
    for t in tensors {
        let numel: usize = t.shape.iter().product();
        if numel != t.values.len() {
            return Err(CheckpointError::InvalidRecord {
                name: t.name.clone(),
                reason: format!(
                    "shape {:?} does not match {} values",
                    t.shape,
                    t.values.len()
                ),
            });
        }
        if !t.dtype.is_float() {
            return Err(CheckpointError::UnsupportedDtype {
                name: t.name.clone(),
                dtype: t.dtype.to_string(),
            });
        }
        if by_name.insert(t.name.as_str(), t).is_some() {
            return Err(CheckpointError::DuplicateTensor {
                name: t.name.clone(),
            });
        }
    }

    let mut header = BTreeMap::new();
    let mut offset = 0u64;
    for (name, t) in &by_name {
        let len = (t.values.len() * t.dtype.size_bytes()) as u64;
        header.insert(
            *name,
            HeaderEntry {
                dtype: t.dtype.as_str(),
                shape: &t.shape,
                data_offsets: [offset, offset + len],
            },
        );
        offset += len;
    }
    let mut header_bytes = serde_json::to_vec(&header).expect("header serializes");
    // pad so the data section starts on an 8-byte boundary
    while header_bytes.len() % 8 != 0 {
        header_bytes.push(b' ');
    }

    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    out.write_all(&(header_bytes.len() as u64).to_le_bytes())
        .map_err(io)?;
    out.write_all(&header_bytes).map_err(io)?;
    let mut buf = Vec::new();
    for t in by_name.values() {
        buf.clear();
        dtype::encode_le(t.dtype, &t.values, &mut buf);
        out.write_all(&buf).map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(())
}

/// Writes one container per `(file name, tensors)` pair into `dir`, plus an
/// index file mapping every tensor to its shard.
pub fn write_sharded_fixture(
    shards: &[(&str, Vec<TensorRecord>)],
    dir: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    let dir = dir.as_ref();
    let mut seen = BTreeSet::new();
    let mut weight_map = BTreeMap::new();
    for (file, tensors) in shards {
        for t in tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(CheckpointError::DuplicateTensor {
                    name: t.name.clone(),
                });
            }
            weight_map.insert(t.name.as_str(), *file);
        }
    }
    for (file, tensors) in shards {
        write_fixture(tensors, dir.join(file))?;
    }
    let index = serde_json::json!({ "metadata": {}, "weight_map": weight_map });
    let index_path = dir.join(INDEX_FILE_NAME);
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&index_path, text).map_err(|source| CheckpointError::Io {
        path: index_path,
        source,
    })
}
