//! Single-file checkpoint archive.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! offset 0   8 bytes   magic  b"SHPOSECK"
//! offset 8   u64       header length N
//! offset 16  N bytes   UTF-8 JSON header
//! offset 16+N          tensor payload: f64 LE values, tensors back to back
//! ```
//!
//! The header is
//!
//! ```json
//! { "schema_version": 1, "config": {...}, "fingerprint": "<sha256 hex>",
//!   "meta": { "seed": 0, "step": 0, "loss_tail": [...], "train_config": ... },
//!   "tensors":   [{"name": "...", "shape": [...], "offset": 0, "len": 864}],
//!   "optimizer": [{"name": "...", "shape": [...], "offset": ..., "len": ...}] }
//! ```
//!
//! `offset` and `len` count `f64` values from the start of the payload.
//! `tensors` holds exactly the network parameters; `optimizer` holds any
//! optimizer state saved alongside them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Network, NetworkConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SHPOSECK";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub step: u64,
    #[serde(default)]
    pub loss_tail: Vec<serde_json::Value>,
    #[serde(default)]
    pub train_config: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    config: NetworkConfig,
    fingerprint: String,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    optimizer: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub fingerprint: String,
    pub meta: CheckpointMeta,
    pub params: Vec<NamedTensor>,
    pub optimizer: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_network(net: &Network, meta: CheckpointMeta) -> Self {
        let params = net
            .named_parameters()
            .into_iter()
            .map(|(name, shape, data)| NamedTensor {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect();
        Self {
            config: net.config().clone(),
            fingerprint: net.config().fingerprint(),
            meta,
            params,
            optimizer: Vec::new(),
        }
    }

    pub fn with_optimizer(mut self, state: Vec<NamedTensor>) -> Self {
        self.optimizer = state;
        self
    }

    pub fn tensor_names(&self) -> Vec<&str> {
        self.params.iter().map(|t| t.name.as_str()).collect()
    }

    /// Rebuilds the network after checking the stored fingerprint.
    pub fn to_network(&self) -> Result<Network> {
        let computed = self.config.fingerprint();
        if computed != self.fingerprint {
            return Err(Error::Fingerprint {
                stored: self.fingerprint.clone(),
                computed,
            });
        }
        let mut net = Network::zeros(self.config.clone())?;
        net.load_parameters(self.params.iter().map(|t| (t.name.as_str(), t.data.as_slice())))?;
        Ok(net)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let mut entries = |ts: &[NamedTensor]| -> Vec<TensorEntry> {
            ts.iter()
                .map(|t| {
                    let e = TensorEntry {
                        name: t.name.clone(),
                        shape: t.shape.clone(),
                        offset,
                        len: t.data.len(),
                    };
                    offset += t.data.len();
                    e
                })
                .collect()
        };
        let tensors = entries(&self.params);
        let optimizer = entries(&self.optimizer);
        let header = Header {
            schema_version: SCHEMA_VERSION,
            config: self.config.clone(),
            fingerprint: self.fingerprint.clone(),
            meta: self.meta.clone(),
            tensors,
            optimizer,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.iter().chain(&self.optimizer) {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("missing magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let payload_start = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Checkpoint("header length exceeds file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..payload_start])?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported schema_version {}",
                header.schema_version
            )));
        }
        let payload = &bytes[payload_start..];
        let read = |entries: &[TensorEntry]| -> Result<Vec<NamedTensor>> {
            entries
                .iter()
                .map(|e| {
                    let (start, end) = (e.offset * 8, (e.offset + e.len) * 8);
                    if end > payload.len() || e.shape.iter().product::<usize>() != e.len {
                        return Err(Error::Checkpoint(format!(
                            "tensor {} is truncated or misshapen",
                            e.name
                        )));
                    }
                    let data = payload[start..end]
                        .chunks_exact(8)
                        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                        .collect();
                    Ok(NamedTensor {
                        name: e.name.clone(),
                        shape: e.shape.clone(),
                        data,
                    })
                })
                .collect()
        };
        Ok(Self {
            params: read(&header.tensors)?,
            optimizer: read(&header.optimizer)?,
            config: header.config,
            fingerprint: header.fingerprint,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ImageTensor;

    fn small() -> Network {
        Network::build(NetworkConfig::scaled(8, 8, 4), 11).unwrap()
    }

    #[test]
    fn round_trip_reproduces_forward_bitwise() {
        let net = small();
        let x = ImageTensor::from_fn(8, 8, 3, |y, x, c| ((y * 8 + x + c) % 7) as f64 / 7.0);
        let ck = Checkpoint::from_network(
            &net,
            CheckpointMeta {
                seed: 11,
                step: 3,
                ..Default::default()
            },
        );
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let net2 = back.to_network().unwrap();
        assert_eq!(net.forward_raw(&x).unwrap(), net2.forward_raw(&x).unwrap());
    }

    #[test]
    fn archive_lists_exactly_the_graph_parameters() {
        let net = small();
        let ck = Checkpoint::from_network(&net, CheckpointMeta::default());
        assert_eq!(
            ck.tensor_names(),
            net.parameter_names().iter().map(String::as_str).collect::<Vec<_>>()
        );
    }

    #[test]
    fn tampered_config_is_refused() {
        let ck = Checkpoint::from_network(&small(), CheckpointMeta::default());
        let bytes = ck.to_bytes().unwrap();
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
        header["config"]["em_shortcut"] = serde_json::Value::Bool(false);
        let json = serde_json::to_vec(&header).unwrap();
        let mut tampered = MAGIC.to_vec();
        tampered.extend_from_slice(&(json.len() as u64).to_le_bytes());
        tampered.extend_from_slice(&json);
        tampered.extend_from_slice(&bytes[16 + hlen..]);
        let err = Checkpoint::from_bytes(&tampered).unwrap().to_network().unwrap_err();
        match err {
            Error::Fingerprint { stored, computed } => {
                assert_eq!(stored, ck.fingerprint);
                assert_ne!(computed, stored);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());
        let mut bytes = Checkpoint::from_network(&small(), CheckpointMeta::default())
            .to_bytes()
            .unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
