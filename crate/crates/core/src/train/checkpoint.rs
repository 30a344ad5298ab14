//! Portable checkpoint format.
//!
//! Layout: magic `AZLB`, one version byte, a little-endian u32 header
//! length, a JSON header (config, vocab, metadata, tensor names + shapes in
//! payload order), then the raw little-endian f64 payload. Loading demands
//! an exact byte count: truncated or trailing data is rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{parameter_specs, ModelConfig};
use crate::tensor::Tensor;
use crate::text::Vocab;

use super::TrainError;

const MAGIC: &[u8; 4] = b"AZLB";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainMetadata {
    pub seed: u64,
    pub steps: u64,
}

/// Trained model state: geometry, named parameters, vocabulary, and the
/// seed/steps that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: BTreeMap<String, Tensor>,
    pub vocab: Vocab,
    pub metadata: TrainMetadata,
}

impl Checkpoint {
    /// Check that the parameter set matches the config exactly.
    pub fn validate(&self) -> Result<(), TrainError> {
        let specs = parameter_specs(&self.config);
        if specs.len() != self.params.len() {
            return Err(TrainError::Format(format!(
                "expected {} parameters for this config, found {}",
                specs.len(),
                self.params.len()
            )));
        }
        for (name, shape, _) in &specs {
            let tensor = self
                .params
                .get(name)
                .ok_or_else(|| TrainError::Format(format!("missing parameter {name}")))?;
            if tensor.shape() != shape.as_slice() {
                return Err(TrainError::Format(format!(
                    "parameter {name} has shape {:?}, config requires {:?}",
                    tensor.shape(),
                    shape
                )));
            }
        }
        if self.vocab.len() != self.config.vocab_size {
            return Err(TrainError::Format(format!(
                "vocabulary of {} tokens does not match config vocab_size {}",
                self.vocab.len(),
                self.config.vocab_size
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocab,
    metadata: TrainMetadata,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

pub fn checkpoint_to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>, TrainError> {
    ckpt.validate()?;
    let header = Header {
        config: ckpt.config,
        vocab: ckpt.vocab.clone(),
        metadata: ckpt.metadata,
        tensors: ckpt
            .params
            .iter()
            .map(|(name, t)| TensorMeta {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(header_json.len() + 16);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for tensor in ckpt.params.values() {
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
    let fail = |msg: String| Err(TrainError::Format(msg));
    if bytes.len() < MAGIC.len() + 1 + 4 {
        return fail("file too short for the AZLB preamble".into());
    }
    if &bytes[..4] != MAGIC {
        return fail(format!(
            "bad magic {:?}, expected \"AZLB\"",
            String::from_utf8_lossy(&bytes[..4])
        ));
    }
    if bytes[4] != VERSION {
        return fail(format!("unsupported version {}, expected {VERSION}", bytes[4]));
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let payload_offset = 9 + header_len;
    if bytes.len() < payload_offset {
        return fail(format!(
            "truncated header: need {header_len} bytes, have {}",
            bytes.len() - 9
        ));
    }
    let header: Header = serde_json::from_slice(&bytes[9..payload_offset])?;

    let total_values: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    let expected_len = payload_offset + total_values * 8;
    if bytes.len() < expected_len {
        return fail(format!(
            "truncated payload: need {} bytes, have {}",
            expected_len,
            bytes.len()
        ));
    }
    if bytes.len() > expected_len {
        return fail(format!(
            "{} trailing bytes after the payload",
            bytes.len() - expected_len
        ));
    }

    let mut params = BTreeMap::new();
    let mut offset = payload_offset;
    for meta in header.tensors {
        let count: usize = meta.shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(f64::from_le_bytes(
                bytes[offset..offset + 8].try_into().expect("8 bytes"),
            ));
            offset += 8;
        }
        if params
            .insert(meta.name.clone(), Tensor::from_vec(meta.shape, data)?)
            .is_some()
        {
            return fail(format!("duplicate parameter {}", meta.name));
        }
    }

    let ckpt = Checkpoint {
        config: header.config,
        params,
        vocab: header.vocab,
        metadata: header.metadata,
    };
    ckpt.validate()?;
    Ok(ckpt)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    Ok(fs::write(path, checkpoint_to_bytes(ckpt)?)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    checkpoint_from_bytes(&fs::read(path)?)
}
