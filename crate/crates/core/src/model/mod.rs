//! Transformer encoder with per-layer zone masking, span-extraction head,
//! and span decoding.

mod encoder;
mod span;
mod zones;

pub use encoder::{
    attention_distributions, attention_layer, bind_params, encode, parameter_specs, ParamKind,
    ParamVars, LN_EPS,
};
pub use span::{best_prediction, predict_span, span_logits, SpanPrediction};
pub use zones::{padding_mask, zone_mask, LayerSelector, Zone, ZoneSpec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenIdOutOfRange { id: usize, vocab_size: usize },
    #[error("sequence of {len} positions exceeds max_positions {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("mask layer {layer} out of range for {num_layers} layers")]
    LayerOutOfRange { layer: usize, num_layers: usize },
    #[error("missing parameter {name}")]
    MissingParam { name: String },
    #[error("invalid decode parameter: {0}")]
    Decode(String),
    #[error("no valid span candidate (empty passage)")]
    NoValidSpan,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Encoder geometry. The desk-scale default shrinks the 12-layer,
/// 768-wide production shape down to something trainable on one core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
}

impl ModelConfig {
    /// Desk-scale default: 4 layers, 4 heads, 128 wide.
    pub fn desk_default(vocab_size: usize) -> Self {
        Self {
            num_layers: 4,
            num_heads: 4,
            d_model: 128,
            d_ff: 512,
            vocab_size,
            max_positions: 128,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_layers == 0 {
            return Err(ModelError::Config("num_layers must be at least 1".into()));
        }
        if self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} must be divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.d_model == 0 || self.d_ff == 0 || self.max_positions == 0 {
            return Err(ModelError::Config("zero-sized dimension".into()));
        }
        if self.vocab_size < crate::text::RESERVED_TOKENS.len() {
            return Err(ModelError::Config(format!(
                "vocab_size {} smaller than the reserved token set",
                self.vocab_size
            )));
        }
        Ok(())
    }
}
