//! Tensor files: an 8-byte little-endian header length, a UTF-8 JSON header
//! naming each tensor and its shape, then every tensor's entries as
//! little-endian `f32` in row-major order, in header order.
//!
//! ```text
//! [u64 LE: header bytes][JSON header]["tensors"[0] data][ "tensors"[1] data]...
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StarError};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Matrix)>,
    /// Free-form JSON stored alongside the tensors.
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors
            .iter()
            .find_map(|(n, m)| (n == name).then_some(m))
    }

    pub fn require(&self, name: &str) -> Result<&Matrix> {
        self.get(name)
            .ok_or_else(|| StarError::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            tensors: self
                .tensors
                .iter()
                .map(|(name, m)| TensorEntry {
                    name: name.clone(),
                    shape: [m.rows(), m.cols()],
                })
                .collect(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let total: usize = self.tensors.iter().map(|(_, m)| m.as_slice().len()).sum();
        let mut out = Vec::with_capacity(8 + json.len() + 4 * total);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, m) in &self.tensors {
            for &v in m.as_slice() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let len_bytes: [u8; 8] = bytes
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| StarError::Checkpoint("file shorter than the length prefix".into()))?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let json = bytes
            .get(8..8usize.saturating_add(header_len))
            .ok_or_else(|| StarError::Checkpoint("truncated header".into()))?;
        let header: Header = serde_json::from_slice(json)
            .map_err(|e| StarError::Checkpoint(format!("bad header: {e}")))?;
        let mut pos = 8 + header_len;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let [r, c] = entry.shape;
            let count = r * c;
            let raw = bytes.get(pos..pos + 4 * count).ok_or_else(|| {
                StarError::Checkpoint(format!("truncated data for `{}`", entry.name))
            })?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            tensors.push((entry.name, Matrix::from_vec(r, c, data)?));
            pos += 4 * count;
        }
        if pos != bytes.len() {
            return Err(StarError::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - pos
            )));
        }
        Ok(Checkpoint {
            tensors,
            metadata: header.metadata,
        })
    }
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()).map_err(|e| StarError::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| StarError::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
