//! Single-file checkpoints.
//!
//! Layout: the magic `VFNCKPT1`, the header length as a little-endian
//! `u64`, a UTF-8 JSON header, then every tensor as little-endian `f64`:
//!
//! ```json
//! {"config": {...}, "step": 120,
//!  "parameters": {"head.w": {"shape": [128, 20], "offset": 0}, ...}}
//! ```
//!
//! Offsets are in bytes from the start of the payload. Optimizer moments
//! travel as extra entries named `adam.m.<param>` and `adam.v.<param>`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::numerics::{OptimizerState, ParamStore, Tensor};

use super::ModelError;

pub const MAGIC: &[u8; 8] = b"VFNCKPT1";
const FIRST_MOMENT: &str = "adam.m.";
const SECOND_MOMENT: &str = "adam.v.";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Whatever configuration the writer chose to echo.
    pub config: serde_json::Value,
    pub step: u64,
    pub params: ParamStore,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: serde_json::Value,
    step: u64,
    parameters: BTreeMap<String, Entry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors: Vec<(String, Vec<usize>, &[f64])> = self
            .params
            .iter()
            .map(|(name, t)| (name.to_string(), t.shape().to_vec(), t.data()))
            .collect();
        if let Some(opt) = &self.optimizer {
            for (prefix, moments) in [(FIRST_MOMENT, &opt.first_moment), (SECOND_MOMENT, &opt.second_moment)] {
                for (name, values) in moments {
                    tensors.push((format!("{prefix}{name}"), vec![values.len()], values.as_slice()));
                }
            }
        }
        let mut parameters = BTreeMap::new();
        let mut payload = Vec::new();
        for (name, shape, data) in tensors {
            parameters.insert(
                name,
                Entry {
                    shape,
                    offset: payload.len() as u64,
                },
            );
            for x in data {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            step: self.step,
            parameters,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err("missing VFNCKPT1 magic".into());
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or("header length runs past the end of the file")?;
        let header: Header =
            serde_json::from_slice(&bytes[16..header_end]).map_err(|e| format!("bad header: {e}"))?;
        let payload = &bytes[header_end..];
        let mut params = ParamStore::new();
        let mut optimizer: Option<OptimizerState> = None;
        for (name, entry) in header.parameters {
            let count: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + count * 8;
            let raw = payload
                .get(start..end)
                .ok_or_else(|| format!("`{name}` runs past the end of the payload"))?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if let Some(param) = name.strip_prefix(FIRST_MOMENT) {
                optimizer.get_or_insert_with(OptimizerState::new).first_moment.insert(param.into(), data);
            } else if let Some(param) = name.strip_prefix(SECOND_MOMENT) {
                optimizer.get_or_insert_with(OptimizerState::new).second_moment.insert(param.into(), data);
            } else {
                let t = Tensor::new(entry.shape, data).map_err(|e| format!("`{name}`: {e}"))?;
                params.insert(name, t);
            }
        }
        if let Some(opt) = optimizer.as_mut() {
            opt.step = header.step;
        }
        Ok(Self {
            config: header.config,
            step: header.step,
            params,
            optimizer,
        })
    }

    /// Writes to a temporary sibling first so a crash never leaves a
    /// truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let io = |source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let tmp = PathBuf::from(format!("{}.tmp", path.display()));
        std::fs::write(&tmp, self.to_bytes()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes).map_err(|message| ModelError::Checkpoint {
            path: path.to_path_buf(),
            message,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip() {
        let mut params = ParamStore::new();
        params.insert("a", Tensor::new(vec![2, 2], vec![1.0, -2.5, 3e-300, f64::MAX]).unwrap());
        params.insert("b.c", Tensor::scalar(0.25));
        let mut opt = OptimizerState::new();
        opt.step = 7;
        opt.first_moment.insert("a".into(), vec![0.1, 0.2, 0.3, 0.4]);
        opt.second_moment.insert("a".into(), vec![1.0, 2.0, 3.0, 4.0]);
        let ck = Checkpoint {
            config: serde_json::json!({"model": {"n_layers": 2}}),
            step: 7,
            params,
            optimizer: Some(opt),
        };
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..8], b"VFNCKPT1");
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
    }

    #[test]
    fn truncation_is_reported() {
        let mut params = ParamStore::new();
        params.insert("a", Tensor::zeros(&[3]));
        let ck = Checkpoint {
            config: serde_json::Value::Null,
            step: 0,
            params,
            optimizer: None,
        };
        let bytes = ck.to_bytes();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(err.contains("`a`"), "{err}");
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
    }
}
