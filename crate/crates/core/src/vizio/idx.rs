//! Loader for the big-endian IDX image/label pair layout used by common
//! grayscale digit corpora. Optional ingestion path; nothing else depends
//! on it.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone)]
pub struct IdxDataset {
    /// `[1, rows, cols]` tensors scaled to `[0, 1]`.
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
}

fn read_u32(bytes: &[u8], pos: usize) -> Result<u32> {
    bytes
        .get(pos..pos + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::TruncatedBlob {
            expected: pos + 4,
            got: bytes.len(),
        })
}

pub fn decode_idx_images(bytes: &[u8]) -> Result<Vec<Tensor>> {
    if read_u32(bytes, 0)? != IMAGES_MAGIC {
        return Err(Error::BadMagic);
    }
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::TruncatedBlob {
            expected,
            got: bytes.len(),
        });
    }
    let plane = rows * cols;
    (0..n)
        .map(|i| {
            let start = 16 + i * plane;
            let data = bytes[start..start + plane]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect();
            Tensor::new(vec![1, rows, cols], data)
        })
        .collect()
}

pub fn decode_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    if read_u32(bytes, 0)? != LABELS_MAGIC {
        return Err(Error::BadMagic);
    }
    let n = read_u32(bytes, 4)? as usize;
    let expected = 8 + n;
    if bytes.len() != expected {
        return Err(Error::TruncatedBlob {
            expected,
            got: bytes.len(),
        });
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Loads an images/labels file pair, cross-checking counts.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<IdxDataset> {
    let images = decode_idx_images(&fs::read(images_path)?)?;
    let labels = decode_idx_labels(&fs::read(labels_path)?)?;
    if images.len() != labels.len() {
        return Err(Error::CountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    Ok(IdxDataset { images, labels })
}
