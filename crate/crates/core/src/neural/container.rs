//! Versioned binary container for trained networks: magic bytes, format
//! version, a JSON header describing the architecture and tensor shapes,
//! then every tensor as little-endian `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{NetworkParams, NetworkSpec};
use crate::error::{Error, Result};
use crate::weekly::Scaler;

pub const MAGIC: &[u8; 8] = b"PCNNWTS\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub spec: NetworkSpec,
    pub params: NetworkParams,
    pub target_scale: f64,
    pub scaler: Option<Scaler>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    target_scale: f64,
    scaler: Option<Scaler>,
    tensors: Vec<TensorEntry>,
}

pub fn encode(bundle: &ModelBundle) -> Result<Vec<u8>> {
    let named = bundle.params.named_tensors();
    let header = Header {
        spec: bundle.spec,
        target_scale: bundle.target_scale,
        scaler: bundle.scaler.clone(),
        tensors: named
            .iter()
            .map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape.clone() })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * bundle.params.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in named {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Container("truncated file".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn decode(mut bytes: &[u8]) -> Result<ModelBundle> {
    if take(&mut bytes, MAGIC.len())? != MAGIC {
        return Err(Error::Container("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Container(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(take(&mut bytes, 8)?.try_into().expect("8 bytes"));
    let header: Header = serde_json::from_slice(take(&mut bytes, len as usize)?)?;

    // Rebuild the architecture, then check it against the stored shapes.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut params = NetworkParams::init(&header.spec, &mut rng)?;
    let expected: Vec<(String, Vec<usize>)> =
        params.named_tensors().into_iter().map(|(n, t)| (n, t.shape.clone())).collect();
    let stored: Vec<(String, Vec<usize>)> =
        header.tensors.into_iter().map(|e| (e.name, e.shape)).collect();
    if expected != stored {
        return Err(Error::Container("tensor layout does not match the stored architecture".into()));
    }
    let count = params.num_params();
    if bytes.len() != 8 * count {
        return Err(Error::Container(format!(
            "expected {} weight bytes, found {}",
            8 * count,
            bytes.len()
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    params.load_flat(&flat)?;
    Ok(ModelBundle {
        spec: header.spec,
        params,
        target_scale: header.target_scale,
        scaler: header.scaler,
    })
}

pub fn save(path: &Path, bundle: &ModelBundle) -> Result<()> {
    crate::io::write_atomic(path, &encode(bundle)?)
}

pub fn load(path: &Path) -> Result<ModelBundle> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
