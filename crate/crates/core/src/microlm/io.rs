//! Binary container for weights and adapters.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 8 bytes   magic "CVRKTNSR"
//! u32       header length H
//! H bytes   UTF-8 JSON header
//! ...       tensor data, row-major, in header order, f64 or f32
//! ```
//!
//! The header holds `format_version`, `kind` (`weights` or `adapter`),
//! `dtype`, the model config (weights) or LoRA config plus `n_layers` and
//! `d_model` (adapters), and `tensors`: a list of `{name, shape}`.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::{MicroLmConfig, Precision};
use super::lora::{LayerLora, LoraAdapter, LoraConfig, LoraPair, Projection};
use super::weights::{MicroLmWeights, TensorRef};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CVRKTNSR";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Weights,
    Adapter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    kind: Kind,
    dtype: Precision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<MicroLmConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lora: Option<LoraConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d_model: Option<usize>,
    tensors: Vec<TensorEntry>,
}

fn encode(header: &Header, tensors: &[TensorRef<'_>]) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + tensors.iter().map(|t| t.data.len() * 8).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors {
        for &v in t.data {
            match header.dtype {
                Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
                Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    out
}

fn entries(tensors: &[TensorRef<'_>]) -> Vec<TensorEntry> {
    tensors.iter().map(|t| TensorEntry { name: t.name.clone(), shape: t.shape.clone() }).collect()
}

/// Splits a file into its header and the flat values of each tensor.
fn decode(bytes: &[u8]) -> std::result::Result<(Header, Vec<Vec<f64>>), String> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err("not a tensor container (bad magic)".into());
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + len).ok_or("truncated header")?;
    let header: Header = serde_json::from_slice(body).map_err(|e| format!("bad header: {e}"))?;
    if header.format_version != FORMAT_VERSION {
        return Err(format!("unsupported format version {}", header.format_version));
    }
    let width = match header.dtype {
        Precision::F64 => 8,
        Precision::F32 => 4,
    };
    let mut data = &bytes[12 + len..];
    let mut values = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        let need = n.checked_mul(width).ok_or("tensor too large")?;
        if data.len() < need {
            return Err(format!("truncated data in tensor {}", t.name));
        }
        let (chunk, rest) = data.split_at(need);
        data = rest;
        values.push(match header.dtype {
            Precision::F64 => chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect(),
            Precision::F32 => {
                chunk.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4")))).collect()
            }
        });
    }
    if !data.is_empty() {
        return Err(format!("{} trailing bytes", data.len()));
    }
    Ok((header, values))
}

/// Copies decoded values into `targets`, which must match the header's
/// tensor table exactly.
fn fill(
    header: &Header,
    values: Vec<Vec<f64>>,
    expected: Vec<TensorEntry>,
    targets: Vec<super::weights::TensorMut<'_>>,
) -> std::result::Result<(), String> {
    if header.tensors != expected {
        let first = header.tensors.iter().zip(&expected).find(|(a, b)| a != b);
        return Err(match first {
            Some((got, want)) => format!("tensor {} has shape {:?}, expected {} {:?}", got.name, got.shape, want.name, want.shape),
            None => format!("{} tensors, expected {}", header.tensors.len(), expected.len()),
        });
    }
    for (t, v) in targets.into_iter().zip(values) {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(format!("tensor {} contains non-finite values", t.name));
        }
        t.data.copy_from_slice(&v);
    }
    Ok(())
}

fn format_err(origin: &Path) -> impl Fn(String) -> Error + '_ {
    move |message| Error::Format { path: origin.to_path_buf(), message }
}

/// Stored with `weights.config.precision`.
pub fn encode_weights(weights: &MicroLmWeights) -> Vec<u8> {
    let tensors = weights.tensors();
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: Kind::Weights,
        dtype: weights.config.precision,
        model: Some(weights.config.clone()),
        lora: None,
        n_layers: None,
        d_model: None,
        tensors: entries(&tensors),
    };
    encode(&header, &tensors)
}

/// `origin` only labels errors.
pub fn decode_weights(bytes: &[u8], origin: &Path) -> Result<MicroLmWeights> {
    let err = format_err(origin);
    let (header, values) = decode(bytes).map_err(&err)?;
    if header.kind != Kind::Weights {
        return Err(err("file holds an adapter, not model weights".into()));
    }
    let config = header.model.clone().ok_or_else(|| err("missing model config".into()))?;
    config.validate().map_err(|e| err(e.to_string()))?;
    let mut weights = MicroLmWeights::init(&config, 0);
    let expected = entries(&weights.tensors());
    fill(&header, values, expected, weights.tensors_mut()).map_err(&err)?;
    Ok(weights)
}

pub fn encode_adapter(adapter: &LoraAdapter, precision: Precision) -> Vec<u8> {
    let tensors = adapter.tensors();
    let d_model = adapter
        .layers
        .iter()
        .find_map(|l| Projection::ALL.iter().find_map(|&p| l.get(p)).map(|pair| pair.a.ncols()))
        .unwrap_or(0);
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: Kind::Adapter,
        dtype: precision,
        model: None,
        lora: Some(adapter.config.clone()),
        n_layers: Some(adapter.layers.len()),
        d_model: Some(d_model),
        tensors: entries(&tensors),
    };
    encode(&header, &tensors)
}

pub fn decode_adapter(bytes: &[u8], origin: &Path) -> Result<LoraAdapter> {
    let err = format_err(origin);
    let (header, values) = decode(bytes).map_err(&err)?;
    if header.kind != Kind::Adapter {
        return Err(err("file holds model weights, not an adapter".into()));
    }
    let (Some(config), Some(n_layers), Some(d)) = (header.lora.clone(), header.n_layers, header.d_model) else {
        return Err(err("adapter header needs lora, n_layers and d_model".into()));
    };
    if config.rank == 0 || config.targets.is_empty() || d == 0 {
        return Err(err("adapter header has zero rank, dimension or targets".into()));
    }
    let r = config.rank;
    let layers = (0..n_layers)
        .map(|_| {
            let pair = || Some(LoraPair { a: Array2::zeros((r, d)), b: Array2::zeros((d, r)) });
            let has = |p| config.targets.contains(&p);
            LayerLora {
                q: if has(Projection::Q) { pair() } else { None },
                k: if has(Projection::K) { pair() } else { None },
                v: if has(Projection::V) { pair() } else { None },
                o: if has(Projection::O) { pair() } else { None },
            }
        })
        .collect();
    let mut adapter = LoraAdapter { config, layers };
    let expected = entries(&adapter.tensors());
    fill(&header, values, expected, adapter.tensors_mut()).map_err(&err)?;
    Ok(adapter)
}

pub fn save_weights(path: &Path, weights: &MicroLmWeights) -> Result<()> {
    Ok(std::fs::write(path, encode_weights(weights))?)
}

pub fn load_weights(path: &Path) -> Result<MicroLmWeights> {
    decode_weights(&std::fs::read(path)?, path)
}

pub fn save_adapter(path: &Path, adapter: &LoraAdapter, precision: Precision) -> Result<()> {
    Ok(std::fs::write(path, encode_adapter(adapter, precision))?)
}

pub fn load_adapter(path: &Path) -> Result<LoraAdapter> {
    decode_adapter(&std::fs::read(path)?, path)
}
