//! Tensor manifests: a JSON index plus one raw little-endian blob per tensor.
//!
//! ```json
//! {"grid": [1, 8, 1],
//!  "tensors": [{"name": "Q", "dtype": "bf16", "shape": [128, 8, 128], "file": "Q.bin"}]}
//! ```
//!
//! Blob paths are relative to the manifest. A blob holds the tensor in
//! row-major order, `product(shape) * element_bytes` bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{TensorValue, Tensors};
use crate::dtype::DType;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("tensor `{name}`: blob has {found} bytes, shape needs {expected}")]
    BlobSize {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("tensor `{0}` has a non-positive extent")]
    Shape(String),
    #[error("tensor `{0}` listed twice")]
    Duplicate(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<i64>,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<[i64; 3]>,
    pub tensors: Vec<Entry>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_manifest(path: &Path) -> Result<(Manifest, Tensors), ManifestError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|source| ManifestError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tensors = Tensors::new();
    for e in &m.tensors {
        if e.shape.iter().any(|&s| s <= 0) {
            return Err(ManifestError::Shape(e.name.clone()));
        }
        let blob_path = dir.join(&e.file);
        let data = fs::read(&blob_path).map_err(io(&blob_path))?;
        let expected = e.shape.iter().product::<i64>() as usize * e.dtype.bytes();
        if data.len() != expected {
            return Err(ManifestError::BlobSize {
                name: e.name.clone(),
                expected,
                found: data.len(),
            });
        }
        let t = TensorValue {
            dtype: e.dtype,
            shape: e.shape.clone(),
            data,
        };
        if tensors.insert(e.name.clone(), t).is_some() {
            return Err(ManifestError::Duplicate(e.name.clone()));
        }
    }
    Ok((m, tensors))
}

/// Writes `tensors` as `<name>.bin` blobs plus `manifest.json` into `dir`.
pub fn write_manifest(dir: &Path, tensors: &Tensors, grid: Option<[i64; 3]>) -> Result<PathBuf, ManifestError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut m = Manifest {
        grid,
        tensors: Vec::new(),
    };
    for (name, t) in tensors {
        let file = format!("{name}.bin");
        let p = dir.join(&file);
        fs::write(&p, &t.data).map_err(io(&p))?;
        m.tensors.push(Entry {
            name: name.clone(),
            dtype: t.dtype,
            shape: t.shape.clone(),
            file,
        });
    }
    let p = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    fs::write(&p, text + "\n").map_err(io(&p))?;
    Ok(p)
}
