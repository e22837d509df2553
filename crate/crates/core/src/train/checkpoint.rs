//! Versioned binary checkpoints: magic, version, a JSON header, then raw
//! little-endian `f64` parameter blobs in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{Model, Resources};
use crate::params::{Param, ParamStore};

use super::metrics::MetricsReport;

const MAGIC: &[u8; 8] = b"MMRDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    seed: u64,
    /// 1-based epoch the parameters come from.
    epoch: usize,
    best_val_accuracy: f64,
    metrics: Option<MetricsReport>,
    params: Vec<BlobEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub epoch: usize,
    pub best_val_accuracy: f64,
    pub metrics: Option<MetricsReport>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model: self.model.clone(),
            train: self.train.clone(),
            seed: self.seed,
            epoch: self.epoch,
            best_val_accuracy: self.best_val_accuracy,
            metrics: self.metrics.clone(),
            params: self
                .params
                .iter()
                .map(|(_, p)| BlobEntry {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    trainable: p.trainable,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, p) in self.params.iter() {
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated header"))?;
        if body.len() < len {
            return Err(bad("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..len]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let mut blobs = &body[len..];
        let mut params = Vec::with_capacity(header.params.len());
        for entry in header.params {
            let n: usize = entry.shape.iter().product();
            if blobs.len() < 8 * n {
                return Err(Error::Checkpoint(format!("blob `{}` is truncated", entry.name)));
            }
            let data = blobs[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            blobs = &blobs[8 * n..];
            params.push(Param {
                name: entry.name,
                shape: entry.shape,
                data,
                trainable: entry.trainable,
            });
        }
        if !blobs.is_empty() {
            return Err(bad("trailing bytes after the last blob"));
        }
        Ok(Self {
            model: header.model,
            train: header.train,
            seed: header.seed,
            epoch: header.epoch,
            best_val_accuracy: header.best_val_accuracy,
            metrics: header.metrics,
            params: ParamStore::from_params(params),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Rebuilds the architecture and copies the stored values by name.
    pub fn restore(&self, res: &Resources) -> Result<(Model, ParamStore)> {
        let (model, mut store) = Model::build(&self.model, res, self.seed)?;
        if store.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "architecture has {} tensors, checkpoint has {}",
                store.len(),
                self.params.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let target = store.get_mut(id);
            let src_id = self
                .params
                .find(&target.name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks `{}`", target.name)))?;
            let src = self.params.get(src_id);
            if src.shape != target.shape {
                return Err(Error::Checkpoint(format!(
                    "`{}` has shape {:?}, expected {:?}",
                    src.name, src.shape, target.shape
                )));
            }
            target.data.copy_from_slice(&src.data);
        }
        Ok((model, store))
    }
}
