//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `SMFNETCK` |
//! | 4 | format version (`u32`, currently 1) |
//! | 8 | header length `n` (`u64`) |
//! | n | UTF-8 JSON header: model config, stage, variant, config hash, step, tensor table |
//! | rest | `f64` payload: every parameter tensor in table order, then the momentum buffers in the same order when `has_optimizer` is set |
//!
//! Values are stored as raw IEEE-754 bits, so save/load is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use smfnet_core::model::{ModelConfig, Variant};
use smfnet_core::optim::OptimizerState;
use smfnet_core::params::{ParamEntry, ParamGroup};
use smfnet_core::ParamStore;

use crate::error::{Error, IoContext, Result};
use crate::train::Stage;

pub const MAGIC: &[u8; 8] = b"SMFNETCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub stage: Stage,
    pub variant: Variant,
    /// SHA-256 of the training configuration that produced this checkpoint.
    pub config_hash: String,
    pub step: u64,
    pub store: ParamStore,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    stage: Stage,
    variant: Variant,
    config_hash: String,
    step: u64,
    optimizer_steps: u64,
    has_optimizer: bool,
    tensors: Vec<TensorInfo>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let entries = self.store.entries();
        let header = Header {
            model: self.model.clone(),
            stage: self.stage,
            variant: self.variant,
            config_hash: self.config_hash.clone(),
            step: self.step,
            optimizer_steps: self.optimizer.as_ref().map_or(0, |o| o.steps),
            has_optimizer: self.optimizer.is_some(),
            tensors: entries
                .iter()
                .map(|e| TensorInfo {
                    name: e.name.clone(),
                    group: e.group,
                    shape: e.shape.clone(),
                    len: e.values.len(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let scalars = self.store.scalar_count() * if self.optimizer.is_some() { 2 } else { 1 };
        let mut out = Vec::with_capacity(20 + json.len() + 8 * scalars);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |vals: &[f64]| {
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for e in entries {
            put(&e.values);
        }
        if let Some(opt) = &self.optimizer {
            if opt.velocity.len() != entries.len() {
                return Err(bad("optimizer state does not match parameter table"));
            }
            for v in &opt.velocity {
                put(v);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let json = bytes.get(20..20 + n).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json)?;
        let mut payload = bytes[20 + n..].chunks_exact(8);
        if !payload.remainder().is_empty() {
            return Err(bad("payload is not a whole number of f64 values"));
        }
        let mut take = |len: usize| -> Result<Vec<f64>> {
            (0..len)
                .map(|_| {
                    payload
                        .next()
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .ok_or_else(|| bad("truncated payload"))
                })
                .collect()
        };
        let mut entries = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            if t.shape.iter().product::<usize>() != t.len {
                return Err(bad(format!("{}: shape does not match length", t.name)));
            }
            entries.push(ParamEntry {
                name: t.name.clone(),
                group: t.group,
                shape: t.shape.clone(),
                values: take(t.len)?,
            });
        }
        let optimizer = if header.has_optimizer {
            let velocity = header.tensors.iter().map(|t| take(t.len)).collect::<Result<_>>()?;
            Some(OptimizerState {
                velocity,
                steps: header.optimizer_steps,
            })
        } else {
            None
        };
        if payload.next().is_some() {
            return Err(bad("trailing payload"));
        }
        Ok(Self {
            model: header.model,
            stage: header.stage,
            variant: header.variant,
            config_hash: header.config_hash,
            step: header.step,
            store: ParamStore::from(entries),
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).at(parent)?;
        }
        fs::write(path, self.to_bytes()?).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).at(path)?)
    }
}
