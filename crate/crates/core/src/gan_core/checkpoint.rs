//! On-disk layout: `meta.json` describing every network and tensor, plus one
//! flat float32 little-endian blob per tensor under `tensors/`.

use std::fs;
use std::path::Path;

use privtranslate_nn::{NamedTensor, Parameters};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{build_network, Network, NetworkSpec};
use crate::error::{Error, Result};

const FORMAT: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    dtype: String,
    file: String,
    sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkMeta {
    role: String,
    spec: NetworkSpec,
    tensors: Vec<TensorMeta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    format: u32,
    networks: Vec<NetworkMeta>,
    extra: serde_json::Value,
    /// SHA-256 of this document serialized with `meta_hash` empty.
    meta_hash: String,
}

pub(crate) fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn meta_digest(meta: &Meta) -> Result<String> {
    let mut unsigned = meta.clone();
    unsigned.meta_hash.clear();
    Ok(hex_sha256(&serde_json::to_vec(&unsigned)?))
}

/// Write `networks` (role, network) and caller metadata to `dir`.
pub fn save_networks(dir: &Path, networks: &[(&str, &Network)], extra: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir.join("tensors"))?;
    let mut metas = Vec::new();
    for (role, net) in networks {
        let mut tensors = Vec::new();
        for (i, t) in net.parameters().iter().enumerate() {
            let bytes: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            let file = format!("tensors/{role}-{i:03}.bin");
            fs::write(dir.join(&file), &bytes)?;
            tensors.push(TensorMeta {
                name: t.name.clone(),
                shape: t.shape.clone(),
                trainable: t.trainable,
                dtype: "float32-le".into(),
                file,
                sha256: hex_sha256(&bytes),
            });
        }
        metas.push(NetworkMeta { role: role.to_string(), spec: net.spec.clone(), tensors });
    }
    let mut meta = Meta { format: FORMAT, networks: metas, extra, meta_hash: String::new() };
    meta.meta_hash = meta_digest(&meta)?;
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

/// Inverse of [`save_networks`]; any hash or layout mismatch is reported as
/// [`Error::CorruptCheckpoint`].
pub fn load_networks(dir: &Path) -> Result<(Vec<(String, Network)>, serde_json::Value)> {
    let meta_path = dir.join("meta.json");
    if !meta_path.exists() {
        return Err(Error::NotFound(meta_path));
    }
    let corrupt = |reason: String| Error::CorruptCheckpoint { path: dir.to_path_buf(), reason };
    let meta: Meta =
        serde_json::from_slice(&fs::read(&meta_path)?).map_err(|e| corrupt(format!("unreadable meta.json: {e}")))?;
    if meta.format != FORMAT {
        return Err(corrupt(format!("unsupported format {}", meta.format)));
    }
    if meta_digest(&meta)? != meta.meta_hash {
        return Err(corrupt("meta hash mismatch".into()));
    }
    let mut out = Vec::new();
    for nm in meta.networks {
        let mut params = Parameters::new();
        for t in nm.tensors {
            let bytes = fs::read(dir.join(&t.file)).map_err(|e| corrupt(format!("{}: {e}", t.file)))?;
            if hex_sha256(&bytes) != t.sha256 {
                return Err(corrupt(format!("hash mismatch for {}", t.file)));
            }
            if bytes.len() % 4 != 0 {
                return Err(corrupt(format!("truncated blob {}", t.file)));
            }
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            params
                .push(NamedTensor { name: t.name, shape: t.shape, trainable: t.trainable, data })
                .map_err(|e| corrupt(e.to_string()))?;
        }
        let mut net = build_network(&nm.spec).map_err(|e| corrupt(e.to_string()))?;
        net.load_parameters(&params).map_err(|e| corrupt(e.to_string()))?;
        out.push((nm.role, net));
    }
    Ok((out, meta.extra))
}
