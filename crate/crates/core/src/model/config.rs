use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Architecture hyperparameters of a decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub hidden_mlp: usize,
    pub rope_theta: f64,
    pub use_rope: bool,
    pub norm_eps: f32,
    pub max_seq: usize,
}

impl ModelConfig {
    /// A config with `d_model = n_heads * head_dim`, a 2x MLP and the byte
    /// tokenizer's vocabulary.
    pub fn new(n_layers: usize, n_heads: usize, n_kv_heads: usize, head_dim: usize) -> Self {
        let d_model = n_heads * head_dim;
        Self {
            n_layers,
            n_heads,
            n_kv_heads,
            head_dim,
            d_model,
            vocab_size: crate::harness::tokenizer::VOCAB_SIZE,
            hidden_mlp: 2 * d_model,
            rope_theta: 10_000.0,
            use_rope: true,
            norm_eps: 1e-5,
            max_seq: 16_384,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.n_kv_heads == 0 || self.head_dim == 0 {
            return Err(config("layer, head and head_dim counts must be positive"));
        }
        if self.d_model != self.n_heads * self.head_dim {
            return Err(config(format!(
                "d_model {} != n_heads {} * head_dim {}",
                self.d_model, self.n_heads, self.head_dim
            )));
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(config(format!(
                "n_heads {} not divisible by n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            )));
        }
        if self.vocab_size < 2 {
            return Err(config("vocab_size must be at least 2"));
        }
        if self.hidden_mlp == 0 || self.max_seq == 0 {
            return Err(config("hidden_mlp and max_seq must be positive"));
        }
        if self.use_rope && !self.head_dim.is_multiple_of(2) {
            return Err(config(format!(
                "rotary embedding needs an even head_dim, got {}",
                self.head_dim
            )));
        }
        // negated so NaN is rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.rope_theta > 0.0) || !(self.norm_eps > 0.0) {
            return Err(config("rope_theta and norm_eps must be positive"));
        }
        Ok(())
    }

    /// Query heads served by each kv head.
    pub fn groups(&self) -> usize {
        self.n_heads / self.n_kv_heads
    }

    pub fn q_dim(&self) -> usize {
        self.n_heads * self.head_dim
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim
    }

    /// Parameter count of one transformer layer.
    pub fn layer_params(&self) -> usize {
        let d = self.d_model;
        let norms = 2 * d;
        let attn = d * self.q_dim() + 2 * d * self.kv_dim() + self.q_dim() * d;
        let mlp = d * 2 * self.hidden_mlp + self.hidden_mlp * d;
        norms + attn + mlp
    }

    /// Bytes of one transformer layer's weights (f32).
    pub fn layer_weight_bytes(&self) -> u64 {
        (self.layer_params() * std::mem::size_of::<f32>()) as u64
    }

    /// Bytes of one position's key and value across all kv heads of a layer.
    pub fn kv_bytes_per_position(&self) -> u64 {
        (2 * self.kv_dim() * std::mem::size_of::<f32>()) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let cfg = ModelConfig::new(2, 4, 2, 16);
        cfg.validate().unwrap();
        assert_eq!(cfg.groups(), 2);

        let mut bad = cfg.clone();
        bad.n_kv_heads = 3;
        assert!(bad.validate().is_err());

        let mut bad = cfg.clone();
        bad.d_model = 60;
        assert!(bad.validate().is_err());

        let mut bad = cfg.clone();
        bad.head_dim = 15;
        bad.d_model = 60;
        assert!(bad.validate().is_err());
        bad.use_rope = false;
        bad.validate().unwrap();

        let mut bad = cfg;
        bad.vocab_size = 1;
        assert!(bad.validate().is_err());
    }
}
