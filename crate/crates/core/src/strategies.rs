//! Baseline cache regimes: full KV, observation-window compression
//! (SnapKV-style) and cumulative-attention eviction (H2O-style).
//!
//! Both compressors keep an independent index set per layer and kv head,
//! derived from that head's scores only.

use serde::{Deserialize, Serialize};

use crate::cost::Meter;
use crate::error::{config, contract, Result};
use crate::model::{
    decode_step, embed, last_row_logits, layer_prefill, rope_for, KvCache, LayerKv, ModelWeights,
    TokenSeq,
};
use crate::tensor::{pool_1d, topk_indices, PoolMode, ScoreVector};

/// Knobs shared by the two compressors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvictionPolicyParams {
    /// Trailing prompt queries whose attention scores the prefix.
    pub observation_window: usize,
    pub pool_kernel: usize,
    pub pool_mode: PoolMode,
    /// Most recent positions always kept by the cumulative-score policy.
    pub recent_keep: usize,
    /// Count the observation window against the budget.
    pub window_in_budget: bool,
}

impl Default for EvictionPolicyParams {
    fn default() -> Self {
        Self {
            observation_window: 32,
            pool_kernel: 5,
            pool_mode: PoolMode::Average,
            recent_keep: 32,
            window_in_budget: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Compression {
    SnapKv,
    H2o,
}

/// Per-layer, per-kv-head compressed cache.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedKv {
    pub cache: KvCache,
    /// `indices[layer][kv_head]`: retained prompt positions, ascending.
    pub indices: Vec<Vec<Vec<usize>>>,
    pub budget: usize,
}

impl CompressedKv {
    pub fn bytes(&self) -> u64 {
        self.cache.bytes()
    }

    /// Number of independent index sets (layers x kv heads).
    pub fn index_set_count(&self) -> usize {
        self.indices.iter().map(Vec::len).sum()
    }
}

fn merge_sorted(mut picked: Vec<usize>, tail: std::ops::Range<usize>) -> Vec<usize> {
    picked.extend(tail);
    picked.sort_unstable();
    picked.dedup();
    picked
}

/// Retained positions for one head under the observation-window policy.
///
/// `window_scores[j]` is the attention mass key `j` received from the last
/// `observation_window` queries. The window itself is always kept; the rest
/// of the budget goes to the best pooled prefix positions.
pub fn snapkv_select(window_scores: &[f32], budget: usize, params: &EvictionPolicyParams) -> Result<Vec<usize>> {
    let n = window_scores.len();
    if budget >= n {
        return Ok((0..n).collect());
    }
    let w = params.observation_window;
    if params.window_in_budget && budget < w {
        return Err(config(format!(
            "budget {budget} smaller than observation window {w}"
        )));
    }
    if n < w {
        return Err(contract(format!("prompt length {n} shorter than observation window {w}")));
    }
    let prefix_len = n - w;
    let keep = if params.window_in_budget {
        budget - w
    } else {
        budget.min(prefix_len)
    };
    let picked = if keep == 0 || prefix_len == 0 {
        Vec::new()
    } else {
        let pooled = pool_1d(&window_scores[..prefix_len], params.pool_kernel, params.pool_mode)?;
        topk_indices(&pooled, keep)?
    };
    Ok(merge_sorted(picked, prefix_len..n))
}

/// Retained positions for one head under the cumulative-attention policy:
/// the `recent_keep` newest positions plus the heaviest older ones.
pub fn h2o_select(column_sums: &[f32], budget: usize, params: &EvictionPolicyParams) -> Result<Vec<usize>> {
    let n = column_sums.len();
    if budget >= n {
        return Ok((0..n).collect());
    }
    let recent = params.recent_keep;
    if budget < recent {
        return Err(config(format!(
            "budget {budget} smaller than recent window {recent}"
        )));
    }
    let prefix_len = n - recent;
    let keep = budget - recent;
    let picked = if keep == 0 {
        Vec::new()
    } else {
        topk_indices(&column_sums[..prefix_len], keep)?
    };
    Ok(merge_sorted(picked, prefix_len..n))
}

fn select(method: Compression, scores: &[f32], budget: usize, params: &EvictionPolicyParams) -> Result<Vec<usize>> {
    match method {
        Compression::SnapKv => snapkv_select(scores, budget, params),
        Compression::H2o => h2o_select(scores, budget, params),
    }
}

/// First query row whose attention feeds the compressor's scores.
pub fn observe_from(method: Compression, n: usize, params: &EvictionPolicyParams) -> usize {
    match method {
        Compression::SnapKv => n.saturating_sub(params.observation_window),
        Compression::H2o => 0,
    }
}

fn compress_layer(layer: &LayerKv, indices: &[Vec<usize>]) -> LayerKv {
    LayerKv {
        heads: layer
            .heads
            .iter()
            .zip(indices)
            .map(|(head, idx)| head.gather(idx))
            .collect(),
    }
}

fn compress_cache(
    method: Compression,
    cache: &KvCache,
    scores: &[Vec<Vec<f32>>],
    budget: usize,
    params: &EvictionPolicyParams,
) -> Result<CompressedKv> {
    if scores.len() != cache.layers.len() {
        return Err(contract("one score set per layer required"));
    }
    let mut out = CompressedKv {
        cache: KvCache {
            layers: Vec::with_capacity(cache.layers.len()),
            next_position: cache.next_position,
        },
        indices: Vec::with_capacity(cache.layers.len()),
        budget,
    };
    for (layer, head_scores) in cache.layers.iter().zip(scores) {
        if head_scores.len() != layer.heads.len() {
            return Err(contract("one score vector per kv head required"));
        }
        let mut idx = Vec::with_capacity(head_scores.len());
        for (head, s) in layer.heads.iter().zip(head_scores) {
            if s.len() != head.len() {
                return Err(contract("score length differs from cache length"));
            }
            idx.push(select(method, s, budget, params)?);
        }
        out.cache.layers.push(compress_layer(layer, &idx));
        out.indices.push(idx);
    }
    Ok(out)
}

/// Compresses a full cache given, per layer and kv head, the attention mass
/// each key received from the observation window.
pub fn snapkv_compress(
    cache: &KvCache,
    window_scores: &[Vec<Vec<f32>>],
    budget: usize,
    params: &EvictionPolicyParams,
) -> Result<CompressedKv> {
    compress_cache(Compression::SnapKv, cache, window_scores, budget, params)
}

/// Compresses a full cache given per-layer, per-kv-head cumulative
/// attention column sums over the whole prompt.
pub fn h2o_compress(
    cache: &KvCache,
    column_sums: &[Vec<Vec<f32>>],
    budget: usize,
    params: &EvictionPolicyParams,
) -> Result<CompressedKv> {
    compress_cache(Compression::H2o, cache, column_sums, budget, params)
}

/// Full prompt pass that compresses each layer as soon as it is computed,
/// so at most one layer's uncompressed KV is live at a time. Returns the
/// compressed cache and the last position's logits.
pub fn prefill_compressed(
    tokens: &TokenSeq,
    weights: &ModelWeights,
    method: Compression,
    budget: usize,
    params: &EvictionPolicyParams,
    meter: &mut Meter,
) -> Result<(CompressedKv, ScoreVector)> {
    let cfg = &weights.config;
    let n = tokens.len();
    if n == 0 {
        return Err(contract("prefill needs at least one token"));
    }
    if n > cfg.max_seq {
        return Err(contract(format!("prompt of {n} tokens exceeds max_seq {}", cfg.max_seq)));
    }
    if budget == 0 {
        return Err(config("cache budget must be positive"));
    }
    let rope = rope_for(cfg)?;
    let mut x = embed(tokens, weights)?;
    let from = observe_from(method, n, params);
    let mut out = CompressedKv {
        cache: KvCache {
            layers: Vec::with_capacity(cfg.n_layers),
            next_position: n,
        },
        indices: Vec::with_capacity(cfg.n_layers),
        budget,
    };
    for layer in 0..cfg.n_layers {
        let pass = layer_prefill(weights, layer, &mut x, rope.as_ref(), Some(from), meter)?;
        let full_bytes = pass.kv.bytes();
        meter.kv.alloc(full_bytes);
        let idx = pass
            .observed
            .iter()
            .map(|s| select(method, s, budget, params))
            .collect::<Result<Vec<_>>>()?;
        let compressed = compress_layer(&pass.kv, &idx);
        meter.kv.alloc(compressed.bytes());
        meter.kv.free(full_bytes);
        out.cache.layers.push(compressed);
        out.indices.push(idx);
    }
    let logits = last_row_logits(weights, &x, meter)?;
    Ok((out, logits))
}

/// One decode step over a compressed cache. Retained keys keep their
/// original positions; the new token takes the next position after the
/// prompt.
pub fn decode_with_compressed(
    token: u32,
    compressed: &mut CompressedKv,
    weights: &ModelWeights,
    meter: &mut Meter,
) -> Result<ScoreVector> {
    decode_step(token, &mut compressed.cache, weights, meter)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(window: usize, recent: usize, kernel: usize) -> EvictionPolicyParams {
        EvictionPolicyParams {
            observation_window: window,
            pool_kernel: kernel,
            recent_keep: recent,
            ..Default::default()
        }
    }

    #[test]
    fn budget_covering_everything_is_identity() {
        let s = [0.1, 0.5, 0.2, 0.2];
        let p = params(2, 2, 1);
        assert_eq!(snapkv_select(&s, 4, &p).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(snapkv_select(&s, 9, &p).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(h2o_select(&s, 4, &p).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn snapkv_keeps_window_and_best_prefix() {
        // prefix 0..6, window 6..8
        let s = [0.0, 0.1, 3.0, 0.0, 0.2, 0.0, 1.0, 1.0];
        let p = params(2, 0, 1);
        assert_eq!(snapkv_select(&s, 3, &p).unwrap(), vec![2, 6, 7]);
        assert_eq!(snapkv_select(&s, 4, &p).unwrap(), vec![2, 4, 6, 7]);
    }

    #[test]
    fn snapkv_budget_below_window_rejected() {
        let s = [0.0; 8];
        assert!(matches!(
            snapkv_select(&s, 1, &params(2, 0, 1)),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn snapkv_window_outside_budget_flag() {
        let s = [0.0, 0.1, 3.0, 0.0, 0.2, 0.0, 1.0, 1.0];
        let p = EvictionPolicyParams {
            window_in_budget: false,
            ..params(2, 0, 1)
        };
        assert_eq!(snapkv_select(&s, 2, &p).unwrap(), vec![2, 4, 6, 7]);
    }

    #[test]
    fn h2o_uniform_scores_take_lowest_indices() {
        let s = [1.0; 10];
        assert_eq!(h2o_select(&s, 5, &params(0, 2, 1)).unwrap(), vec![0, 1, 2, 8, 9]);
    }

    #[test]
    fn h2o_budget_below_recent_rejected() {
        assert!(matches!(
            h2o_select(&[0.0; 10], 3, &params(0, 4, 1)),
            Err(crate::Error::Config(_))
        ));
    }
}
