//! Checkpoint layout: the 8-byte magic `SCKDCKPT`, a little-endian u32 header
//! length, a JSON header, then every parameter as f32le in network order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{build_network, Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::nn::Module;

const MAGIC: &[u8; 8] = b"SCKDCKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec: NetworkSpec,
    pub seed: u64,
    pub epoch: usize,
    pub params: Vec<ParamEntry>,
}

pub fn encode_checkpoint(network: &Network, seed: u64, epoch: usize) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        spec: network.spec.clone(),
        seed,
        epoch,
        params: network
            .params()
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * network.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in network.params() {
        for v in &p.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(network: &Network, seed: u64, epoch: usize, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(network, seed, epoch)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, CheckpointHeader)> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingArtifact(path.to_path_buf()))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    decode_checkpoint(&bytes).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}

fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<(Network, CheckpointHeader), String> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err("bad magic".into());
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(12..12 + header_len)
        .ok_or("truncated header")?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| e.to_string())?;
    let mut network = build_network(&header.spec, header.seed).map_err(|e| e.to_string())?;
    let mut offset = 12 + header_len;
    {
        let params = network.params_mut();
        if params.len() != header.params.len() {
            return Err(format!(
                "header lists {} tensors, architecture has {}",
                header.params.len(),
                params.len()
            ));
        }
        for (p, entry) in params.into_iter().zip(&header.params) {
            if p.name != entry.name || p.shape != entry.shape {
                return Err(format!("tensor {} does not match architecture", entry.name));
            }
            let n = p.value.len() * 4;
            let chunk = bytes.get(offset..offset + n).ok_or("truncated weights")?;
            for (v, b) in p.value.iter_mut().zip(chunk.chunks_exact(4)) {
                *v = f32::from_le_bytes(b.try_into().expect("4 bytes"));
            }
            offset += n;
        }
    }
    if offset != bytes.len() {
        return Err("trailing bytes after weights".into());
    }
    Ok((network, header))
}
