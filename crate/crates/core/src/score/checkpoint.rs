//! Binary checkpoint: 8-byte magic, `u32` version, `u32` header length, a
//! JSON header, then every tensor as little-endian `f64` in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ardae::MlpParams;
use super::mlp::{Activation, Layer, Mlp};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TWDARDAE";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    activation: Activation,
    patch_radius: usize,
    layer_sizes: Vec<usize>,
    config_hash: String,
    ema: bool,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub config_hash: String,
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn tensors(prefix: &str, net: &Mlp) -> Vec<TensorEntry> {
    net.layers()
        .iter()
        .enumerate()
        .flat_map(|(i, l)| {
            [
                TensorEntry { name: format!("{prefix}.{i}.weight"), shape: vec![l.outputs, l.inputs] },
                TensorEntry { name: format!("{prefix}.{i}.bias"), shape: vec![l.outputs] },
            ]
        })
        .collect()
}

pub fn write(path: &Path, params: &MlpParams, config_hash: &str) -> Result<()> {
    let mut entries = tensors("net", &params.net);
    entries.extend(tensors("ema", &params.ema));
    let header = Header {
        activation: params.net.activation(),
        patch_radius: params.patch_radius,
        layer_sizes: params.net.sizes(),
        config_hash: config_hash.to_string(),
        ema: true,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + 16 * params.net.num_params());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in params.net.params().chain(params.ema.params()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end =
        pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, pos, 4)?.try_into().expect("4 bytes")))
}

fn read_net(bytes: &[u8], pos: &mut usize, entries: &[TensorEntry], activation: Activation) -> Result<Mlp> {
    let mut layers = Vec::with_capacity(entries.len() / 2);
    for pair in entries.chunks(2) {
        let [w, b] = pair else {
            return Err(Error::Format("weight without bias".into()));
        };
        let (outputs, inputs) = match w.shape[..] {
            [o, i] => (o, i),
            _ => return Err(Error::Format(format!("tensor {} is not a matrix", w.name))),
        };
        if b.shape != [outputs] {
            return Err(Error::Format(format!("bias {} has shape {:?}", b.name, b.shape)));
        }
        let mut read = |n: usize| -> Result<Vec<f64>> {
            let raw = take(bytes, pos, n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
        };
        let weights = read(outputs * inputs)?;
        let bias = read(outputs)?;
        layers.push(Layer { inputs, outputs, weights, bias });
    }
    Mlp::from_layers(layers, activation)
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    if take(&bytes, &mut pos, 8)? != MAGIC {
        return Err(Error::Format(format!("{} is not a checkpoint", path.display())));
    }
    let version = read_u32(&bytes, &mut pos)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = read_u32(&bytes, &mut pos)? as usize;
    let header: Header = serde_json::from_slice(take(&bytes, &mut pos, len)?)?;
    if !header.ema {
        return Err(Error::Format("checkpoint has no EMA weights".into()));
    }
    let half = header.tensors.len() / 2;
    if !header.tensors.len().is_multiple_of(2) || half == 0 {
        return Err(Error::Format("unexpected tensor count".into()));
    }
    let net = read_net(&bytes, &mut pos, &header.tensors[..half], header.activation)?;
    let ema = read_net(&bytes, &mut pos, &header.tensors[half..], header.activation)?;
    if pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - pos)));
    }
    if net.sizes() != header.layer_sizes {
        return Err(Error::Format("tensor shapes disagree with layer sizes".into()));
    }
    Ok(Checkpoint { params: MlpParams::new(net, ema, header.patch_radius)?, config_hash: header.config_hash })
}
