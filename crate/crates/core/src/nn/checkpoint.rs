//! Checkpoint file format.
//!
//! Layout: one line of JSON (terminated by `\n`) describing the contents,
//! followed by raw little-endian `f32` arrays:
//!
//! * every parameter, in manifest order;
//! * if `has_optimizer_state`: every Adam first moment in manifest order,
//!   then every second moment in manifest order.
//!
//! Loading and re-saving a checkpoint reproduces the file byte-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::optim::AdamState;
use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    params: Vec<ParamSpec>,
    has_optimizer_state: bool,
    step: u64,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    meta: serde_json::Value,
}

/// A deserialized checkpoint: parameters, optional optimizer state, the
/// training step, and caller-defined metadata (the model configuration).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ParamStore<f32>,
    pub optimizer: Option<AdamState<f32>>,
    pub step: u64,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(params: ParamStore<f32>) -> Self {
        Checkpoint {
            params,
            optimizer: None,
            step: 0,
            meta: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            params: self
                .params
                .iter()
                .map(|p| ParamSpec {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
            has_optimizer_state: self.optimizer.is_some(),
            step: self.step,
            meta: self.meta.clone(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for p in self.params.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(state) = &self.optimizer {
            if !state.matches(&self.params) {
                return Err(Error::internal(
                    "checkpoint optimizer state does not match parameters",
                ));
            }
            for t in state.m.iter().chain(state.v.iter()) {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format("checkpoint: missing header terminator"))?;
        let header: Header = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| Error::format(format!("checkpoint: bad header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::format(format!(
                "checkpoint: unsupported version {}",
                header.version
            )));
        }

        let mut pos = newline + 1;
        let mut read_tensor = |shape: &[usize]| -> Result<Tensor<f32>> {
            let n: usize = shape.iter().product();
            let need = n * 4;
            if pos + need > bytes.len() {
                return Err(Error::format("checkpoint: payload truncated"));
            }
            let data: Vec<f32> = bytes[pos..pos + need]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            pos += need;
            Tensor::from_vec(shape, data)
        };

        let mut params = ParamStore::new();
        for spec in &header.params {
            let t = read_tensor(&spec.shape)?;
            params.add(spec.name.clone(), t)?;
        }
        let optimizer = if header.has_optimizer_state {
            let mut m = Vec::with_capacity(header.params.len());
            for spec in &header.params {
                m.push(read_tensor(&spec.shape)?);
            }
            let mut v = Vec::with_capacity(header.params.len());
            for spec in &header.params {
                v.push(read_tensor(&spec.shape)?);
            }
            Some(AdamState {
                m,
                v,
                step: header.step,
            })
        } else {
            None
        };
        if pos != bytes.len() {
            return Err(Error::format(format!(
                "checkpoint: {} trailing bytes",
                bytes.len() - pos
            )));
        }
        Ok(Checkpoint {
            params,
            optimizer,
            step: header.step,
            meta: header.meta,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path.as_ref(), ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path.as_ref())?;
    Checkpoint::from_bytes(&bytes)
}
