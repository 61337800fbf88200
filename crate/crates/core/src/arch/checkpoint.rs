//! Checkpoint container.
//!
//! ```text
//! magic      8 bytes   "SCLBCKP1"
//! header_len u64 LE
//! header     JSON      config, seed, damping, tensor and mask directory
//! blob       bytes     f64 LE tensors, then LSB-first mask bitsets
//! ```
//!
//! Every directory entry carries a byte offset and length into the blob.
//! Loading rebuilds the architecture from the stored config and rejects any
//! entry whose shape or size disagrees with it, as well as a blob whose
//! length differs from the declared total.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_network, ArchConfig, ConvSpec, Network};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SCLBCKP1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub layer: String,
    pub bits: usize,
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DampingInfo {
    pub enabled: bool,
    pub floor: f64,
    pub decay: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: u32,
    pub config: ArchConfig,
    pub seed: u64,
    pub damping: DampingInfo,
    pub input_norm: (f64, f64),
    pub layers: Vec<ConvSpec>,
    pub tensors: Vec<TensorEntry>,
    pub masks: Vec<MaskEntry>,
    pub blob_bytes: usize,
    /// Free-form provenance (epoch, run id, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn encode_bits(mask: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; mask.len().div_ceil(8)];
    for (i, &b) in mask.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn decode_bits(bytes: &[u8], bits: usize) -> Vec<bool> {
    (0..bits).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

fn named_tensors(net: &Network) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    for c in &net.convs {
        out.push((format!("{}.weight", c.spec.name), c.weight.shape().to_vec(), c.weight.data().to_vec()));
        out.push((format!("{}.bias", c.spec.name), c.bias.shape().to_vec(), c.bias.data().to_vec()));
    }
    for (i, b) in net.bns.iter().enumerate() {
        let c = b.gamma.len();
        out.push((format!("bn{}.gamma", i), vec![c], b.gamma.data().to_vec()));
        out.push((format!("bn{}.beta", i), vec![c], b.beta.data().to_vec()));
        out.push((format!("bn{}.running_mean", i), vec![c], b.running_mean.clone()));
        out.push((format!("bn{}.running_var", i), vec![c], b.running_var.clone()));
    }
    out
}

pub fn to_bytes(net: &Network, extra: serde_json::Value) -> Result<Vec<u8>> {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, shape, data) in named_tensors(net) {
        let offset = blob.len();
        for v in &data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name,
            shape,
            offset,
            bytes: data.len() * 8,
        });
    }
    let mut masks = Vec::new();
    for c in &net.convs {
        if let Some(m) = &c.prune_mask {
            let bits = encode_bits(m);
            masks.push(MaskEntry {
                layer: c.spec.name.clone(),
                bits: m.len(),
                offset: blob.len(),
                bytes: bits.len(),
            });
            blob.extend_from_slice(&bits);
        }
    }
    let cfg = net.config();
    let header = Header {
        format: 1,
        config: cfg.clone(),
        seed: net.seed,
        damping: DampingInfo {
            enabled: cfg.damped,
            floor: cfg.damping_floor,
            decay: cfg.decay.name().to_string(),
        },
        input_norm: net.input_norm,
        layers: net.arch.convs.clone(),
        tensors,
        masks,
        blob_bytes: blob.len(),
        extra,
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn read_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("missing magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let rest = &bytes[16..];
    if hlen > rest.len() {
        return Err(Error::Checkpoint(format!("header claims {} bytes, file has {}", hlen, rest.len())));
    }
    let header: Header = serde_json::from_slice(&rest[..hlen])?;
    let blob = &rest[hlen..];
    if blob.len() != header.blob_bytes {
        return Err(Error::Checkpoint(format!(
            "blob is {} bytes, header declares {}",
            blob.len(),
            header.blob_bytes
        )));
    }
    Ok((header, blob))
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Network, Header)> {
    let (header, blob) = read_header(bytes)?;
    let mut net = build_network(&header.config, header.seed)?;
    if header.layers != net.arch.convs {
        return Err(Error::Checkpoint("layer list does not match the stored config".into()));
    }
    let expected = named_tensors(&net);
    if expected.len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, header lists {}",
            expected.len(),
            header.tensors.len()
        )));
    }
    let mut values = Vec::with_capacity(expected.len());
    for ((name, shape, _), entry) in expected.iter().zip(&header.tensors) {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::Checkpoint(format!("entry {} {:?} does not match {} {:?}", entry.name, entry.shape, name, shape)));
        }
        let n: usize = shape.iter().product();
        if entry.bytes != n * 8 || entry.offset + entry.bytes > blob.len() {
            return Err(Error::Checkpoint(format!("size mismatch for {}", name)));
        }
        let data: Vec<f64> = blob[entry.offset..entry.offset + entry.bytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        values.push(data);
    }
    let mut it = values.into_iter();
    for c in net.convs.iter_mut() {
        c.weight.data_mut().copy_from_slice(&it.next().expect("weight"));
        c.bias.data_mut().copy_from_slice(&it.next().expect("bias"));
    }
    for b in net.bns.iter_mut() {
        b.gamma.data_mut().copy_from_slice(&it.next().expect("gamma"));
        b.beta.data_mut().copy_from_slice(&it.next().expect("beta"));
        b.running_mean = it.next().expect("mean");
        b.running_var = it.next().expect("var");
    }
    for m in &header.masks {
        let layer = net
            .convs
            .iter_mut()
            .find(|c| c.spec.name == m.layer)
            .ok_or_else(|| Error::Checkpoint(format!("mask for unknown layer {}", m.layer)))?;
        if m.bits != layer.weight.len() || m.bytes != m.bits.div_ceil(8) || m.offset + m.bytes > blob.len() {
            return Err(Error::Checkpoint(format!("mask size mismatch for {}", m.layer)));
        }
        layer.prune_mask = Some(decode_bits(&blob[m.offset..m.offset + m.bytes], m.bits));
    }
    net.input_norm = header.input_norm;
    Ok((net, header))
}

pub fn save(net: &Network, path: &Path, extra: serde_json::Value) -> Result<()> {
    let bytes = to_bytes(net, extra)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Network, Header)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
