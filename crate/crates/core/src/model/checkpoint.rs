//! Single-file checkpoint:
//!
//! ```text
//! b"QPDACKPT"                     8 bytes
//! header length                   u64, little-endian
//! header                          JSON: config, schema_hash, seed, epoch, tensors
//! payload                         every tensor in layout order, f32 little-endian
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelError, ModelParams};
use crate::autodiff::Mat;

const MAGIC: &[u8; 8] = b"QPDACKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub schema_hash: String,
    pub seed: u64,
    pub epoch: usize,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub schema_hash: String,
    pub seed: u64,
    pub epoch: usize,
}

/// Rounds every parameter through f32, i.e. to what a checkpoint stores.
pub fn quantize(params: &ModelParams) -> ModelParams {
    let mut p = params.clone();
    for t in &mut p.tensors {
        for v in &mut t.data {
            *v = f64::from(*v as f32);
        }
    }
    p
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            config: self.params.config.clone(),
            schema_hash: self.schema_hash.clone(),
            seed: self.seed,
            epoch: self.epoch,
            tensors: self
                .params
                .specs
                .iter()
                .map(|s| TensorEntry {
                    name: s.name.clone(),
                    shape: [s.rows, s.cols],
                })
                .collect(),
        };
        let h = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(16 + h.len() + 4 * self.params.count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(h.len() as u64).to_le_bytes());
        out.extend_from_slice(&h);
        for t in &self.params.tensors {
            for &v in &t.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| ModelError::Checkpoint(format!("header: {e}")))?;
        let mut payload = bytes[16 + hlen..].chunks_exact(4);
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let n = e.shape[0] * e.shape[1];
            let data: Vec<f64> = payload
                .by_ref()
                .take(n)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            if data.len() != n {
                return Err(bad("truncated payload"));
            }
            tensors.push(Mat::from_vec(e.shape[0], e.shape[1], data));
        }
        if payload.next().is_some() || !payload.remainder().is_empty() {
            return Err(bad("trailing bytes after payload"));
        }
        let params = ModelParams::from_tensors(header.config, tensors)?;
        for (s, e) in params.specs.iter().zip(&header.tensors) {
            if s.name != e.name {
                return Err(ModelError::Checkpoint(format!(
                    "tensor order mismatch: {} vs {}",
                    s.name, e.name
                )));
            }
        }
        Ok(Checkpoint {
            params,
            schema_hash: header.schema_hash,
            seed: header.seed,
            epoch: header.epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_hash(path: &Path) -> Result<String, std::io::Error> {
    Ok(crate::hex(&Sha256::digest(fs::read(path)?)))
}
