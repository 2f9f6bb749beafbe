//! Decoder-only transformer: embeddings, rotary positions, grouped-query
//! causal attention, gated MLP and RMS norms.

pub mod attention;
mod config;
mod forward;
pub mod kv;
pub mod rope;
mod weights;

use serde::{Deserialize, Serialize};

pub use attention::{causal_attention, grouped_causal_attention, repeat_kv};
pub use config::ModelConfig;
pub use forward::{
    decode_step, embed, generate_greedy, layer_prefill, prefill, LayerPass, LayerQk, PrefillOptions,
    PrefillOutput,
};
pub use kv::{cache_bytes, HeadKv, KvCache, LayerKv};
pub use rope::{apply_rope, Rope};
pub use weights::{tensor_shapes, LayerWeights, ModelWeights};

pub(crate) use forward::{last_row_logits, rope_for};

use crate::error::{contract, Result};

/// A sequence of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<u32>);

impl TokenSeq {
    pub fn new(ids: Vec<u32>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }

    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.0.iter().find(|&&t| t as usize >= vocab_size) {
            Some(t) => Err(contract(format!("token id {t} outside vocabulary of {vocab_size}"))),
            None => Ok(()),
        }
    }
}

impl From<Vec<u32>> for TokenSeq {
    fn from(ids: Vec<u32>) -> Self {
        Self(ids)
    }
}
