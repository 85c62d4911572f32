//! Binary checkpoint: an 8-byte magic, a little-endian `u64` manifest
//! length, a JSON manifest, then every parameter as little-endian `f64` in
//! manifest order. The manifest carries a SHA-256 of the payload, so any
//! corruption is caught on load.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelDims, ModelParams};
use crate::autodiff::Tensor;
use crate::data::LabelMode;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BRAGCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dims: ModelDims,
    pub max_len: usize,
    pub seed: u64,
    pub label_mode: LabelMode,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    #[serde(flatten)]
    header: CheckpointHeader,
    tensors: Vec<TensorEntry>,
    payload_sha256: String,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: ModelParams,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_checkpoint(w: &mut impl Write, header: &CheckpointHeader, model: &ModelParams) -> Result<()> {
    if header.dims != model.dims() {
        return Err(Error::Checkpoint(format!(
            "header dims {:?} disagree with model dims {:?}",
            header.dims,
            model.dims()
        )));
    }
    let named = model.named_tensors();
    let mut payload = Vec::with_capacity(8 * model.num_parameters());
    for (_, t) in &named {
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        header: header.clone(),
        tensors: named
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape(),
            })
            .collect(),
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    let manifest = serde_json::to_vec(&manifest)?;
    w.write_all(MAGIC)?;
    w.write_all(&(manifest.len() as u64).to_le_bytes())?;
    w.write_all(&manifest)?;
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    let bad = |msg: String| Error::Checkpoint(msg);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing checkpoint magic".into()));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let manifest_end = 16usize
        .checked_add(manifest_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| bad(format!("manifest length {manifest_len} exceeds file size")))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..manifest_end])
        .map_err(|e| bad(format!("unreadable manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let payload = &bytes[manifest_end..];
    let digest = hex(&Sha256::digest(payload));
    if digest != manifest.payload_sha256 {
        return Err(bad(format!(
            "payload digest {digest} does not match manifest {}",
            manifest.payload_sha256
        )));
    }

    let header = manifest.header;
    let mut model = ModelParams::zeros(header.dims)?;
    let expected: Vec<(String, [usize; 2])> = model
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape()))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(bad(format!(
            "manifest lists {} tensors, model needs {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    let total: usize = expected.iter().map(|(_, [r, c])| r * c).sum();
    if payload.len() != total * 8 {
        return Err(bad(format!(
            "payload holds {} bytes, manifest implies {}",
            payload.len(),
            total * 8
        )));
    }
    let mut offset = 0;
    for ((entry, (name, shape)), slot) in manifest
        .tensors
        .iter()
        .zip(&expected)
        .zip(model.tensors_mut())
    {
        if &entry.name != name || entry.shape != *shape {
            return Err(bad(format!(
                "tensor {} {:?} where {name} {shape:?} was expected",
                entry.name, entry.shape
            )));
        }
        let n = shape[0] * shape[1];
        let values = payload[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        *slot = Tensor::new(shape[0], shape[1], values)?;
        offset += n * 8;
    }
    Ok(Checkpoint { header, model })
}

pub fn save_checkpoint(path: &Path, header: &CheckpointHeader, model: &ModelParams) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, header, model)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut f = fs::File::open(path)?;
    read_checkpoint(&mut f)
}
