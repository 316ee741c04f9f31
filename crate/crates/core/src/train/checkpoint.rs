//! Binary weight files: magic, version, JSON header, little-endian f32
//! values, SHA-256 of everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ArchitectureConfig, Network};

const MAGIC: &[u8; 8] = b"VEINCKPT";
const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: String,
    params: Vec<(String, usize)>,
}

pub fn checkpoint_bytes(net: &Network<f32>) -> Vec<u8> {
    let header = Header {
        architecture: net.architecture().to_json(),
        params: net.params().iter().map(|p| (p.name.clone(), p.values.len())).collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for p in net.params() {
        for v in &p.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(digest.as_slice());
    out
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checksum(msg.into())
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Network<f32>> {
    if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN {
        return Err(corrupt("checkpoint is truncated"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checkpoint digest mismatch"));
    }
    if &body[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::InvalidInput(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let rest = &body[20..];
    if hlen > rest.len() {
        return Err(corrupt("header length exceeds file"));
    }
    let header: Header = serde_json::from_slice(&rest[..hlen])?;
    let arch = ArchitectureConfig::from_json(&header.architecture)?;
    let mut net = Network::<f32>::new(&arch, 0)?;
    let mut values = rest[hlen..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    if rest[hlen..].len() % 4 != 0 || header.params.len() != net.params().len() {
        return Err(Error::InvalidInput("checkpoint does not match its architecture".into()));
    }
    for (p, (name, len)) in net.params_mut().iter_mut().zip(&header.params) {
        if &p.name != name || p.values.len() != *len {
            return Err(Error::InvalidInput(format!("parameter `{name}` does not match the architecture")));
        }
        for v in p.values.iter_mut() {
            *v = values.next().ok_or_else(|| Error::InvalidInput("checkpoint has too few values".into()))?;
        }
    }
    if values.next().is_some() {
        return Err(Error::InvalidInput("checkpoint has trailing values".into()));
    }
    Ok(net)
}

pub fn save_checkpoint(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(net)).map_err(|e| Error::write(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network<f32>> {
    checkpoint_from_bytes(&fs::read(path)?)
}
