//! Tensor container access.
//!
//! Layout of a container file:
//!
//! ```text
//!   [8 bytes LE u64: header length N]
//!   [N bytes: UTF-8 JSON header, {name: {dtype, shape, data_offsets}}]
//!   [raw little-endian tensor data]
//! ```
//!
//! `data_offsets` are relative to the first byte after the header. Multi-file
//! checkpoints carry an index file whose `"weight_map"` maps every tensor
//! name to the shard file that stores it.
//!
//! Opening a checkpoint reads headers only; tensor bytes are fetched one
//! tensor at a time by [`CheckpointManifest::load_tensor`].

mod dtype;
mod writer;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use serde::Deserialize;

pub use dtype::{bf16_bits_to_f32, f16_bits_to_f32, Dtype};
pub use writer::{write_fixture, write_sharded_fixture, INDEX_FILE_NAME};

use crate::error::CheckpointError;

/// Upper bound on a header we are willing to parse.
const MAX_HEADER_LEN: u64 = 100 * 1024 * 1024;

/// One named tensor, decoded to `f32` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub values: Vec<f32>,
    /// Number of NaN/inf values found while decoding. Non-zero marks the
    /// record as unusable for analysis.
    pub non_finite: usize,
}

impl TensorRecord {
    /// Builds an `F32` record, validating the shape against the value count.
    pub fn new(
        name: impl Into<String>,
        shape: Vec<usize>,
        values: Vec<f32>,
    ) -> Result<Self, CheckpointError> {
        Self::with_dtype(name, shape, Dtype::F32, values)
    }

    pub fn with_dtype(
        name: impl Into<String>,
        shape: Vec<usize>,
        dtype: Dtype,
        values: Vec<f32>,
    ) -> Result<Self, CheckpointError> {
        let name = name.into();
        if name.is_empty() {
            return Err(CheckpointError::InvalidRecord {
                name,
                reason: "empty name".into(),
            });
        }
        if !dtype.is_float() {
            return Err(CheckpointError::UnsupportedDtype {
                name,
                dtype: dtype.to_string(),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(CheckpointError::InvalidRecord {
                name,
                reason: format!("shape {shape:?} needs {numel} values, got {}", values.len()),
            });
        }
        let non_finite = values.iter().filter(|v| !v.is_finite()).count();
        Ok(TensorRecord {
            name,
            shape,
            dtype,
            values,
            non_finite,
        })
    }

    pub fn is_flagged(&self) -> bool {
        self.non_finite > 0
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }
}

/// One file of a checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub path: PathBuf,
    /// File size in bytes at open time.
    pub size: u64,
    /// Absolute offset of the data section (8 + header length).
    pub data_start: u64,
}

/// Location and type of a tensor inside a shard.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorEntry {
    pub shard: usize,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Byte range relative to the shard's data section.
    pub begin: u64,
    pub end: u64,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Header-level view of a checkpoint. Immutable once opened; every
/// `load_tensor` call opens its own file handle, so concurrent readers are
/// fine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointManifest {
    pub shards: Vec<Shard>,
    pub tensors: BTreeMap<String, TensorEntry>,
}

#[derive(Deserialize)]
struct RawEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [u64; 2],
}

#[derive(Deserialize)]
struct RawIndex {
    weight_map: BTreeMap<String, String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Opens a single container file, a shard index file, or a directory
/// holding either.
pub fn open_checkpoint(path: impl AsRef<Path>) -> Result<CheckpointManifest, CheckpointError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(CheckpointError::NotFound(path.to_path_buf()));
    }
    if path.is_dir() {
        return open_directory(path);
    }
    if is_index_file(path) {
        return open_index(path);
    }
    let mut manifest = CheckpointManifest {
        shards: Vec::new(),
        tensors: BTreeMap::new(),
    };
    add_shard(&mut manifest, path)?;
    Ok(manifest)
}

fn is_index_file(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".index.json"))
}

fn open_directory(dir: &Path) -> Result<CheckpointManifest, CheckpointError> {
    let mut indexes = Vec::new();
    let mut containers = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let p = entry.map_err(io_err(dir))?.path();
        if !p.is_file() {
            continue;
        }
        if is_index_file(&p) {
            indexes.push(p);
        } else if p.extension().is_some_and(|e| e == "safetensors") {
            containers.push(p);
        }
    }
    indexes.sort();
    containers.sort();
    match indexes.len() {
        1 => return open_index(&indexes[0]),
        0 => {}
        _ => {
            return Err(CheckpointError::MalformedIndex {
                path: dir.to_path_buf(),
                reason: format!("{} index files found", indexes.len()),
            })
        }
    }
    if containers.is_empty() {
        return Err(CheckpointError::NotFound(dir.join("*.safetensors")));
    }
    let mut manifest = CheckpointManifest {
        shards: Vec::new(),
        tensors: BTreeMap::new(),
    };
    for c in &containers {
        add_shard(&mut manifest, c)?;
    }
    Ok(manifest)
}

fn open_index(index_path: &Path) -> Result<CheckpointManifest, CheckpointError> {
    let text = fs::read_to_string(index_path).map_err(io_err(index_path))?;
    let index: RawIndex =
        serde_json::from_str(&text).map_err(|e| CheckpointError::MalformedIndex {
            path: index_path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let base = index_path.parent().unwrap_or_else(|| Path::new("."));

    let mut shard_files: Vec<&String> = index.weight_map.values().collect();
    shard_files.sort();
    shard_files.dedup();

    let mut manifest = CheckpointManifest {
        shards: Vec::new(),
        tensors: BTreeMap::new(),
    };
    for file in shard_files {
        let shard_path = base.join(file);
        if !shard_path.is_file() {
            return Err(CheckpointError::NotFound(shard_path));
        }
        add_shard(&mut manifest, &shard_path)?;
    }

    for (name, file) in &index.weight_map {
        let Some(entry) = manifest.tensors.get(name) else {
            return Err(CheckpointError::MalformedIndex {
                path: index_path.to_path_buf(),
                reason: format!("tensor {name:?} is not present in shard {file:?}"),
            });
        };
        let actual = &manifest.shards[entry.shard].path;
        if actual != &base.join(file) {
            return Err(CheckpointError::MalformedIndex {
                path: index_path.to_path_buf(),
                reason: format!(
                    "tensor {name:?} mapped to {file:?} but stored in {}",
                    actual.display()
                ),
            });
        }
    }
    Ok(manifest)
}

fn malformed(path: &Path, reason: impl Into<String>) -> CheckpointError {
    CheckpointError::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads one container header and merges its tensors into `manifest`.
fn add_shard(manifest: &mut CheckpointManifest, path: &Path) -> Result<(), CheckpointError> {
    let mut file = File::open(path).map_err(io_err(path))?;
    let size = file.metadata().map_err(io_err(path))?.len();
    if size < 8 {
        return Err(malformed(
            path,
            format!("file is {size} bytes, too small for a header"),
        ));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes).map_err(io_err(path))?;
    let header_len = u64::from_le_bytes(len_bytes);
    if header_len > size - 8 {
        return Err(malformed(
            path,
            format!("header length {header_len} exceeds file size {size}"),
        ));
    }
    if header_len > MAX_HEADER_LEN {
        return Err(malformed(
            path,
            format!("header length {header_len} is too large"),
        ));
    }
    let mut header = vec![0u8; header_len as usize];
    file.read_exact(&mut header).map_err(io_err(path))?;
    let header = std::str::from_utf8(&header).map_err(|e| malformed(path, e.to_string()))?;
    let raw: HashMap<String, serde_json::Value> =
        serde_json::from_str(header).map_err(|e| malformed(path, e.to_string()))?;

    let shard_idx = manifest.shards.len();
    let mut ranges: Vec<(u64, u64, &str)> = Vec::with_capacity(raw.len());
    let mut parsed = Vec::with_capacity(raw.len());
    for (name, value) in &raw {
        if name == "__metadata__" {
            continue;
        }
        let entry: RawEntry = serde_json::from_value(value.clone())
            .map_err(|e| malformed(path, format!("entry {name:?}: {e}")))?;
        let dtype = Dtype::parse(&entry.dtype).ok_or_else(|| {
            malformed(
                path,
                format!("entry {name:?}: unknown dtype {}", entry.dtype),
            )
        })?;
        let [begin, end] = entry.data_offsets;
        if begin > end {
            return Err(malformed(
                path,
                format!("entry {name:?}: inverted range {begin}..{end}"),
            ));
        }
        let expected = entry
            .shape
            .iter()
            .try_fold(dtype.size_bytes() as u64, |acc, &d| {
                acc.checked_mul(d as u64)
            })
            .ok_or_else(|| malformed(path, format!("entry {name:?}: shape overflows")))?;
        if end - begin != expected {
            return Err(malformed(
                path,
                format!(
                    "entry {name:?}: range {begin}..{end} holds {} bytes, shape {:?} of {dtype} needs {expected}",
                    end - begin,
                    entry.shape
                ),
            ));
        }
        ranges.push((begin, end, name.as_str()));
        parsed.push((
            name.clone(),
            TensorEntry {
                shard: shard_idx,
                dtype,
                shape: entry.shape,
                begin,
                end,
            },
        ));
    }

    ranges.sort_unstable();
    for pair in ranges.windows(2) {
        let (_, prev_end, prev) = pair[0];
        let (begin, _, name) = pair[1];
        if begin < prev_end {
            return Err(malformed(
                path,
                format!("tensors {prev:?} and {name:?} overlap"),
            ));
        }
    }

    for (name, entry) in parsed {
        if manifest.tensors.contains_key(&name) {
            return Err(CheckpointError::DuplicateTensor { name });
        }
        manifest.tensors.insert(name, entry);
    }
    manifest.shards.push(Shard {
        path: path.to_path_buf(),
        size,
        data_start: 8 + header_len,
    });
    Ok(())
}

impl CheckpointManifest {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn entry(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.get(name)
    }

    /// Reads and decodes one tensor. Non-finite values do not fail the
    /// load; they are counted in [`TensorRecord::non_finite`].
    pub fn load_tensor(&self, name: &str) -> Result<TensorRecord, CheckpointError> {
        let entry = self
            .tensors
            .get(name)
            .ok_or_else(|| CheckpointError::UnknownTensor(name.to_string()))?;
        if !entry.dtype.is_float() {
            return Err(CheckpointError::UnsupportedDtype {
                name: name.to_string(),
                dtype: entry.dtype.to_string(),
            });
        }
        let shard = &self.shards[entry.shard];
        let mut file = File::open(&shard.path).map_err(io_err(&shard.path))?;
        let available = file.metadata().map_err(io_err(&shard.path))?.len();
        let needed = shard.data_start + entry.end;
        if needed > available {
            return Err(CheckpointError::Truncated {
                name: name.to_string(),
                needed,
                available,
            });
        }
        file.seek(SeekFrom::Start(shard.data_start + entry.begin))
            .map_err(io_err(&shard.path))?;
        let mut bytes = vec![0u8; (entry.end - entry.begin) as usize];
        file.read_exact(&mut bytes).map_err(io_err(&shard.path))?;
        let values = dtype::decode_le(entry.dtype, &bytes).expect("float dtype checked above");
        TensorRecord::with_dtype(name, entry.shape.clone(), entry.dtype, values)
    }
}
