//! Reader and canonical writer for the IDX container (MNIST-family files).
//!
//! Layout: a big-endian magic word, one big-endian u32 per dimension, then
//! the row-major unsigned-byte payload.

use std::fs;
use std::path::Path;

use ndarray::Array3;

use super::{DataError, ImageSet};
use crate::Scalar;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded contents of one IDX file.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxData<T> {
    Images(ImageSet<T>),
    Labels(Vec<u8>),
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DataError::Truncated {
            expected: offset + 4,
            actual: bytes.len(),
        })
}

/// Parses an IDX byte buffer; pixel bytes are scaled from `[0,255]` to `[0,1]`.
pub fn parse_idx<T: Scalar>(raw: &[u8]) -> Result<IdxData<T>, DataError> {
    let magic = read_u32(raw, 0)?;
    let ndims = match magic {
        IMAGES_MAGIC => 3,
        LABELS_MAGIC => 1,
        other => return Err(DataError::BadMagic(other)),
    };
    let dims = (0..ndims)
        .map(|d| read_u32(raw, 4 + 4 * d).map(|v| v as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let header = 4 + 4 * ndims;
    let count: usize = dims.iter().product();
    let expected = header + count;
    if raw.len() < expected {
        return Err(DataError::Truncated {
            expected,
            actual: raw.len(),
        });
    }
    let payload = &raw[header..expected];
    if ndims == 1 {
        return Ok(IdxData::Labels(payload.to_vec()));
    }
    let scale = T::lit(255.0);
    let pixels: Vec<T> = payload.iter().map(|&b| T::lit(b as f64) / scale).collect();
    let images = Array3::from_shape_vec((dims[0], dims[1], dims[2]), pixels)
        .expect("payload length checked against header");
    Ok(IdxData::Images(ImageSet::new(images, None)?))
}

/// Quantizes a `[0,1]` pixel to a byte; out-of-range values are clamped.
pub fn quantize<T: Scalar>(v: T) -> u8 {
    let x = v.as_f64().clamp(0.0, 1.0) * 255.0;
    x.round() as u8
}

/// Canonical image writer; inverse of [`parse_idx`] on byte-valued pixels.
pub fn write_idx_images<T: Scalar>(images: &Array3<T>) -> Vec<u8> {
    let (n, h, w) = images.dim();
    let mut out = Vec::with_capacity(16 + n * h * w);
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [n, h, w] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(images.iter().map(|&v| quantize(v)));
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn read_idx_file<T: Scalar>(path: &Path) -> Result<IdxData<T>, DataError> {
    let raw = fs::read(path).map_err(|e| DataError::Io(path.display().to_string(), e))?;
    parse_idx(&raw)
}

/// Loads an image file and an optional matching label file into one set.
pub fn load_labeled<T: Scalar>(
    images: &Path,
    labels: Option<&Path>,
) -> Result<ImageSet<T>, DataError> {
    let set = match read_idx_file::<T>(images)? {
        IdxData::Images(set) => set,
        IdxData::Labels(_) => return Err(DataError::BadMagic(LABELS_MAGIC)),
    };
    match labels {
        None => Ok(set),
        Some(path) => match read_idx_file::<T>(path)? {
            IdxData::Labels(l) => ImageSet::new(set.images, Some(l)),
            IdxData::Images(_) => Err(DataError::BadMagic(IMAGES_MAGIC)),
        },
    }
}
