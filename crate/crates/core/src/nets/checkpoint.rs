//! Versioned on-disk tensor archives: a JSON manifest plus one raw
//! little-endian blob per named tensor.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ArchitectureDescriptor, NetError, NetworkParams, Role, TensorMap};
use crate::io::write_atomic;
use crate::Scalar;

pub const FORMAT: &str = "demixgan-tensors";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported archive {format} v{version}")]
    Version { format: String, version: u32 },
    #[error("archive holds {found} tensors, expected {expected}")]
    Dtype { expected: String, found: String },
    #[error("tensor `{0}` is corrupt (size or digest mismatch)")]
    Corrupt(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
    sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dtype: String,
    meta: Value,
    tensors: Vec<TensorEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |e| CheckpointError::Io(path.display().to_string(), e)
}

/// Writes `tensors` and free-form `meta` under `dir`.
pub fn save_tensors<T: Scalar>(dir: &Path, meta: Value, tensors: &TensorMap<T>) -> Result<(), CheckpointError> {
    let blob_dir = dir.join("tensors");
    fs::create_dir_all(&blob_dir).map_err(io_err(&blob_dir))?;
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors.iter() {
        let mut bytes = Vec::with_capacity(t.len() * T::BYTES);
        for &v in t.as_standard_layout().iter() {
            v.write_le(&mut bytes);
        }
        let file = format!("tensors/{name}.bin");
        let path = dir.join(&file);
        write_atomic(&path, &bytes).map_err(io_err(&path))?;
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            file,
            sha256: hex(&Sha256::digest(&bytes)),
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        dtype: T::DTYPE.into(),
        meta,
        tensors: entries,
    };
    let path = dir.join("manifest.json");
    write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes()).map_err(io_err(&path))
}

/// Reads an archive written by [`save_tensors`], verifying digests.
pub fn load_tensors<T: Scalar>(dir: &Path) -> Result<(Value, TensorMap<T>), CheckpointError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(CheckpointError::Version {
            format: manifest.format,
            version: manifest.version,
        });
    }
    if manifest.dtype != T::DTYPE {
        return Err(CheckpointError::Dtype {
            expected: T::DTYPE.into(),
            found: manifest.dtype,
        });
    }
    let mut tensors = TensorMap::new();
    for e in manifest.tensors {
        let path = dir.join(&e.file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let count: usize = e.shape.iter().product();
        if bytes.len() != count * T::BYTES || hex(&Sha256::digest(&bytes)) != e.sha256 {
            return Err(CheckpointError::Corrupt(e.name));
        }
        let values: Vec<T> = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
        let t = ArrayD::from_shape_vec(IxDyn(&e.shape), values).map_err(|_| CheckpointError::Corrupt(e.name.clone()))?;
        tensors.insert(e.name, t);
    }
    Ok((manifest.meta, tensors))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetMeta {
    role: Role,
    arch: ArchitectureDescriptor,
    seed: u64,
    step: u64,
}

/// Saves network parameters with their descriptor, seed and step count.
pub fn save_checkpoint<T: Scalar>(dir: &Path, params: &NetworkParams<T>, step: u64) -> Result<(), CheckpointError> {
    let meta = NetMeta {
        role: params.role,
        arch: params.arch.clone(),
        seed: params.seed,
        step,
    };
    save_tensors(dir, serde_json::to_value(meta)?, &params.tensors)
}

/// Loads and validates a network checkpoint; returns it with its step count.
pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<(NetworkParams<T>, u64), CheckpointError> {
    let (meta, tensors) = load_tensors::<T>(dir)?;
    let meta: NetMeta = serde_json::from_value(meta)?;
    let params = NetworkParams {
        arch: meta.arch,
        role: meta.role,
        seed: meta.seed,
        tensors,
    };
    params.validate()?;
    Ok((params, meta.step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{generator_forward, init_generator};
    use ndarray::Array2;

    #[test]
    fn reload_reproduces_forward_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let arch = ArchitectureDescriptor::custom((8, 8), 3);
        let g = init_generator::<f32>(&arch, 11).unwrap();
        save_checkpoint(dir.path(), &g, 42).unwrap();
        let (back, step) = load_checkpoint::<f32>(dir.path()).unwrap();
        assert_eq!(step, 42);
        assert_eq!(back, g);
        let z = Array2::from_shape_fn((3, 3), |(i, j)| (i as f32 - j as f32) / 3.0);
        let a = generator_forward(&g, z.view()).unwrap();
        let b = generator_forward(&back, z.view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn detects_corruption_and_dtype() {
        let dir = tempfile::tempdir().unwrap();
        let arch = ArchitectureDescriptor::custom((4, 4), 2);
        let g = init_generator::<f64>(&arch, 1).unwrap();
        save_checkpoint(dir.path(), &g, 0).unwrap();
        assert!(matches!(load_checkpoint::<f32>(dir.path()), Err(CheckpointError::Dtype { .. })));
        let blob = dir.path().join("tensors/fc1.bias.bin");
        let mut bytes = fs::read(&blob).unwrap();
        bytes[0] ^= 1;
        fs::write(&blob, bytes).unwrap();
        assert!(matches!(load_checkpoint::<f64>(dir.path()), Err(CheckpointError::Corrupt(_))));
    }
}
