//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, u32 version, u64 header length, JSON header
//! (vocabulary, model shape, optimizer hyperparameters, provenance), then the
//! parameters and, if present, both optimizer moments as little-endian f64.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, OptimizerState, Transformer};
use crate::error::ModelError;
use crate::vocab::Vocabulary;

const MAGIC: &[u8; 8] = b"CALFTCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub vocab: Vocabulary,
    pub model: Transformer,
    pub optimizer: Option<OptimizerState>,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    base_lr: f64,
    weight_decay: f64,
    warmup_fraction: f64,
    total_steps: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    vocab: Vocabulary,
    model: ModelConfig,
    num_params: usize,
    optimizer: Option<OptimizerHeader>,
    config_hash: String,
    seed: u64,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, ModelError> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), ModelError> {
        let header = Header {
            vocab: self.vocab.clone(),
            model: self.model.config().clone(),
            num_params: self.model.num_params(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                base_lr: o.base_lr,
                weight_decay: o.weight_decay,
                warmup_fraction: o.warmup_fraction,
                total_steps: o.total_steps,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
                step: o.step,
            }),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
        };
        let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        write_f64s(w, self.model.params())?;
        if let Some(o) = &self.optimizer {
            write_f64s(w, &o.m)?;
            write_f64s(w, &o.v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ModelError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let h: Header = serde_json::from_slice(&json).map_err(|e| bad(e.to_string()))?;
        if h.vocab.len() != h.model.vocab_size {
            return Err(bad("vocabulary size does not match model"));
        }
        let params = read_f64s(r, h.num_params)?;
        let model = Transformer::from_parts(h.model, params)?;
        let optimizer = match h.optimizer {
            Some(o) => Some(OptimizerState {
                base_lr: o.base_lr,
                weight_decay: o.weight_decay,
                warmup_fraction: o.warmup_fraction,
                total_steps: o.total_steps,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
                step: o.step,
                m: read_f64s(r, h.num_params)?,
                v: read_f64s(r, h.num_params)?,
            }),
            None => None,
        };
        Ok(Checkpoint {
            vocab: h.vocab,
            model,
            optimizer,
            config_hash: h.config_hash,
            seed: h.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}
