//! Weight file format: 8-byte magic `FEIW0001`, little-endian u32 header
//! length, UTF-8 JSON header (layer kinds, shapes, feature flags, per-tensor
//! byte offsets), then one contiguous blob of little-endian f32 values.
//!
//! Values are stored as f32; models whose weights are exactly representable
//! in f32 (everything the trainer and randomizer produce) round-trip
//! bit-exactly.

use crate::error::{Error, Result};
use crate::nn::{Layer, NetworkModel};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 8] = b"FEIW0001";

#[derive(Debug, Serialize, Deserialize)]
struct HeaderTensor {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the f32 blob.
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderLayer {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    padding: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    feature: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    tensors: Vec<HeaderTensor>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    input_shape: Vec<usize>,
    layers: Vec<HeaderLayer>,
}

/// Serializes a model to the FEIW0001 byte layout.
pub fn encode_weights(model: &NetworkModel) -> Vec<u8> {
    let mut header = Header {
        input_shape: model.input_shape().to_vec(),
        layers: Vec::new(),
    };
    let mut blob: Vec<u8> = Vec::new();
    for layer in model.layers() {
        let mut hl = HeaderLayer {
            kind: layer.kind_name().into(),
            stride: None,
            padding: None,
            feature: None,
            tensors: Vec::new(),
        };
        let push_tensor = |hl: &mut HeaderLayer, blob: &mut Vec<u8>, name: &str, t: &Tensor| {
            hl.tensors.push(HeaderTensor {
                name: name.into(),
                shape: t.shape().to_vec(),
                offset: blob.len() as u64,
            });
            for &v in t.data() {
                blob.extend_from_slice(&(v as f32).to_le_bytes());
            }
        };
        match layer {
            Layer::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => {
                hl.stride = Some(*stride);
                hl.padding = Some(*padding);
                push_tensor(&mut hl, &mut blob, "weight", weight);
                push_tensor(&mut hl, &mut blob, "bias", bias);
            }
            Layer::Linear { weight, bias } => {
                push_tensor(&mut hl, &mut blob, "weight", weight);
                push_tensor(&mut hl, &mut blob, "bias", bias);
            }
            Layer::Relu { feature } => hl.feature = Some(*feature),
            Layer::MaxPool2x2 | Layer::Flatten => {}
        }
        header.layers.push(hl);
    }
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + header_bytes.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&blob);
    out
}

fn read_tensor(blob: &[u8], ht: &HeaderTensor) -> Result<Tensor> {
    let count: usize = ht.shape.iter().product();
    let start = ht.offset as usize;
    let end = start
        .checked_add(count * 4)
        .ok_or_else(|| Error::MalformedHeader(format!("tensor {} offset overflow", ht.name)))?;
    if end > blob.len() {
        return Err(Error::TruncatedBlob {
            expected: end,
            got: blob.len(),
        });
    }
    let mut data = Vec::with_capacity(count);
    for chunk in blob[start..end].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    Tensor::new(ht.shape.clone(), data)
}

/// Parses the FEIW0001 byte layout back into a model.
pub fn decode_weights(bytes: &[u8]) -> Result<NetworkModel> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(Error::TruncatedBlob {
            expected: 12,
            got: bytes.len(),
        });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(Error::TruncatedBlob {
            expected: 12 + header_len,
            got: bytes.len(),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let blob = &bytes[12 + header_len..];
    let mut layers = Vec::with_capacity(header.layers.len());
    let mut blob_used = 0usize;
    for (i, hl) in header.layers.iter().enumerate() {
        let find = |name: &str| -> Result<&HeaderTensor> {
            hl.tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| {
                    Error::MalformedHeader(format!("layer {i} ({}) missing tensor {name}", hl.kind))
                })
        };
        let layer = match hl.kind.as_str() {
            "conv2d" => {
                let wt = find("weight")?;
                if wt.shape.len() != 4 {
                    return Err(Error::MalformedHeader(format!(
                        "layer {i}: conv2d weight must be rank 4, got {:?}",
                        wt.shape
                    )));
                }
                Layer::Conv2d {
                    weight: read_tensor(blob, wt)?,
                    bias: read_tensor(blob, find("bias")?)?,
                    stride: hl.stride.unwrap_or(1),
                    padding: hl.padding.unwrap_or(0),
                }
            }
            "linear" => {
                let wt = find("weight")?;
                if wt.shape.len() != 2 {
                    return Err(Error::MalformedHeader(format!(
                        "layer {i}: linear weight must be rank 2, got {:?}",
                        wt.shape
                    )));
                }
                Layer::Linear {
                    weight: read_tensor(blob, wt)?,
                    bias: read_tensor(blob, find("bias")?)?,
                }
            }
            "relu" => Layer::Relu {
                feature: hl.feature.unwrap_or(false),
            },
            "maxpool2x2" => Layer::MaxPool2x2,
            "flatten" => Layer::Flatten,
            other => {
                return Err(Error::MalformedHeader(format!(
                    "layer {i}: unknown kind {other:?}"
                )))
            }
        };
        for ht in &hl.tensors {
            let count: usize = ht.shape.iter().product();
            blob_used = blob_used.max(ht.offset as usize + count * 4);
        }
        layers.push(layer);
    }
    if blob.len() != blob_used {
        return Err(Error::HeaderMismatch(format!(
            "blob holds {} bytes but header declares {blob_used}",
            blob.len()
        )));
    }
    NetworkModel::new(layers, header.input_shape)
        .map_err(|e| Error::HeaderMismatch(e.to_string()))
}

pub fn save_weights(model: &NetworkModel, path: &Path) -> Result<()> {
    fs::write(path, encode_weights(model))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<NetworkModel> {
    decode_weights(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> NetworkModel {
        let layers = vec![
            Layer::Conv2d {
                weight: Tensor::new(vec![2, 1, 3, 3], (0..18).map(|i| i as f64 * 0.125).collect())
                    .unwrap(),
                bias: Tensor::new(vec![2], vec![0.5, -0.25]).unwrap(),
                stride: 1,
                padding: 1,
            },
            Layer::Relu { feature: true },
            Layer::MaxPool2x2,
            Layer::Flatten,
            Layer::Linear {
                weight: Tensor::new(vec![3, 8], (0..24).map(|i| i as f64 * -0.0625).collect())
                    .unwrap(),
                bias: Tensor::zeros(&[3]),
            },
        ];
        NetworkModel::new(layers, vec![1, 4, 4]).unwrap()
    }

    fn weights_of(model: &NetworkModel) -> Vec<Vec<f64>> {
        model
            .layers()
            .iter()
            .flat_map(|l| match l {
                Layer::Conv2d { weight, bias, .. } | Layer::Linear { weight, bias } => {
                    vec![weight.data().to_vec(), bias.data().to_vec()]
                }
                _ => vec![],
            })
            .collect()
    }

    #[test]
    fn round_trip_is_bit_identical_for_f32_representable_weights() {
        let model = small_model();
        let bytes = encode_weights(&model);
        let loaded = decode_weights(&bytes).unwrap();
        assert_eq!(weights_of(&model), weights_of(&loaded));
        assert_eq!(bytes, encode_weights(&loaded));
    }

    #[test]
    fn corrupt_magic_is_bad_magic() {
        let mut bytes = encode_weights(&small_model());
        bytes[0] = b'X';
        assert_eq!(decode_weights(&bytes).unwrap_err().code(), "bad-magic");
    }

    #[test]
    fn short_blob_is_truncated() {
        let mut bytes = encode_weights(&small_model());
        bytes.truncate(bytes.len() - 8);
        assert_eq!(decode_weights(&bytes).unwrap_err().code(), "truncated-blob");
    }

    #[test]
    fn garbage_header_is_malformed() {
        let model = small_model();
        let bytes = encode_weights(&model);
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut bad = bytes.clone();
        bad[12..12 + header_len].fill(b'{');
        assert_eq!(
            decode_weights(&bad).unwrap_err().code(),
            "malformed-header"
        );
    }

    #[test]
    fn oversized_blob_is_header_mismatch() {
        let mut bytes = encode_weights(&small_model());
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert_eq!(
            decode_weights(&bytes).unwrap_err().code(),
            "header-mismatch"
        );
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.feiw");
        let model = small_model();
        save_weights(&model, &path).unwrap();
        let loaded = load_weights(&path).unwrap();
        assert_eq!(weights_of(&model), weights_of(&loaded));
    }
}
