//! Prefill and single-token decode.
//!
//! Layer body: RMS norm, grouped-query attention, residual add, RMS norm,
//! gated SiLU MLP (fused gate/up projection, then down), residual add.

use crate::cost::{matmul_flops, Meter};
use crate::error::{contract, Result};
use crate::model::attention::{attend_row, prefill_head, Observer};
use crate::model::kv::{HeadKv, KvCache, LayerKv};
use crate::model::rope::Rope;
use crate::model::{ModelConfig, ModelWeights, TokenSeq};
use crate::tensor::{argmax, matmul, rms_norm_rows, Matrix, ScoreVector};

/// Input embedding: row `i` is the dictionary row of token `i`.
pub fn embed(tokens: &TokenSeq, weights: &ModelWeights) -> Result<Matrix> {
    tokens.check_vocab(weights.config.vocab_size)?;
    let d = weights.config.d_model;
    let mut out = Matrix::zeros(tokens.len(), d);
    for (i, &t) in tokens.ids().iter().enumerate() {
        out.row_mut(i)
            .copy_from_slice(weights.tok_embeddings.row(t as usize));
    }
    Ok(out)
}

pub(crate) fn rope_for(cfg: &ModelConfig) -> Result<Option<Rope>> {
    if cfg.use_rope {
        Rope::new(cfg.head_dim, cfg.rope_theta).map(Some)
    } else {
        Ok(None)
    }
}

#[inline]
fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

fn add_in_place(x: &mut Matrix, y: &Matrix) {
    for (a, b) in x.data_mut().iter_mut().zip(y.data()) {
        *a += b;
    }
}

/// Residual MLP half of a layer.
fn mlp_block(weights: &ModelWeights, layer: usize, x: &mut Matrix, meter: &mut Meter) -> Result<()> {
    let cfg = &weights.config;
    let lw = &weights.layers[layer];
    let xn = rms_norm_rows(x, &lw.mlp_norm, cfg.norm_eps)?;
    let gate_up = matmul(&xn, &lw.w_gate_up, &mut meter.flops.mlp)?;
    let hidden = cfg.hidden_mlp;
    let mut act = Matrix::zeros(x.rows(), hidden);
    for i in 0..x.rows() {
        let gu = gate_up.row(i);
        for (j, a) in act.row_mut(i).iter_mut().enumerate() {
            *a = silu(gu[j]) * gu[hidden + j];
        }
    }
    let down = matmul(&act, &lw.w_down, &mut meter.flops.mlp)?;
    add_in_place(x, &down);
    Ok(())
}

/// Artifacts of one layer's prompt pass.
pub struct LayerPass {
    /// Post-RoPE queries, `[n, n_heads * head_dim]`.
    pub q: Matrix,
    /// Post-RoPE keys, `[n, n_kv_heads * head_dim]`.
    pub k: Matrix,
    pub kv: LayerKv,
    /// Per kv head, attention mass each key received from observed rows
    /// (summed over the group's query heads). Empty unless requested.
    pub observed: Vec<Vec<f32>>,
}

/// Runs layer `layer` over the whole prompt, updating the residual stream
/// `x` in place. Positions are `0..n`.
pub fn layer_prefill(
    weights: &ModelWeights,
    layer: usize,
    x: &mut Matrix,
    rope: Option<&Rope>,
    observe_from: Option<usize>,
    meter: &mut Meter,
) -> Result<LayerPass> {
    let cfg = &weights.config;
    let lw = &weights.layers[layer];
    let (n, hd) = (x.rows(), cfg.head_dim);
    meter.touch_layer(layer);

    let xn = rms_norm_rows(x, &lw.attn_norm, cfg.norm_eps)?;
    let mut q = matmul(&xn, &lw.wq, &mut meter.flops.projection)?;
    let mut k = matmul(&xn, &lw.wk, &mut meter.flops.projection)?;
    let v = matmul(&xn, &lw.wv, &mut meter.flops.projection)?;
    if let Some(rope) = rope {
        for i in 0..n {
            rope.rotate_row(q.row_mut(i), i as i64);
            rope.rotate_row(k.row_mut(i), i as i64);
        }
    }

    let mut kv = LayerKv { heads: Vec::with_capacity(cfg.n_kv_heads) };
    for g in 0..cfg.n_kv_heads {
        kv.heads.push(HeadKv::from_parts(
            hd,
            (0..n).collect(),
            k.column_block(g * hd, hd).into_data(),
            v.column_block(g * hd, hd).into_data(),
        )?);
    }

    let mut observed = match observe_from {
        Some(_) => vec![vec![0.0f32; n]; cfg.n_kv_heads],
        None => Vec::new(),
    };
    let groups = cfg.groups();
    let mut attn = Matrix::zeros(n, cfg.q_dim());
    for (g, head) in kv.heads.iter().enumerate() {
        for qh in g * groups..(g + 1) * groups {
            let qm = q.column_block(qh * hd, hd);
            let observer = observe_from.map(|from_row| Observer {
                    from_row,
                    totals: &mut observed[g],
                });
            let out = prefill_head(qm.data(), &head.keys, &head.values, n, hd, observer);
            for i in 0..n {
                attn.row_mut(i)[qh * hd..(qh + 1) * hd]
                    .copy_from_slice(&out[i * hd..(i + 1) * hd]);
            }
        }
    }
    let heads = cfg.n_heads as u64;
    meter.flops.score += heads * matmul_flops(n, hd, n);
    meter.flops.value += heads * matmul_flops(n, n, hd);

    let o = matmul(&attn, &lw.wo, &mut meter.flops.projection)?;
    add_in_place(x, &o);
    mlp_block(weights, layer, x, meter)?;
    Ok(LayerPass { q, k, kv, observed })
}

/// Final norm of the last row followed by the output embedding.
pub(crate) fn last_row_logits(weights: &ModelWeights, x: &Matrix, meter: &mut Meter) -> Result<ScoreVector> {
    let last = Matrix::new(1, x.cols(), x.row(x.rows() - 1).to_vec())?;
    let normed = rms_norm_rows(&last, &weights.final_norm, weights.config.norm_eps)?;
    let logits = matmul(&normed, &weights.output, &mut meter.flops.lm_head)?;
    ScoreVector::new(logits.into_data())
}

/// Post-RoPE queries and keys of the last computed layer.
#[derive(Debug, Clone)]
pub struct LayerQk {
    pub layer: usize,
    pub q: Matrix,
    pub k: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrefillOptions {
    /// Number of layers to run, `1..=n_layers`. `None` runs all of them.
    pub upto_layer: Option<usize>,
    /// Keep every computed layer's KV (generation follows) or drop each
    /// layer's KV as soon as the next layer starts (selection pass).
    pub keep_cache: bool,
}

impl Default for PrefillOptions {
    fn default() -> Self {
        Self {
            upto_layer: None,
            keep_cache: true,
        }
    }
}

pub struct PrefillOutput {
    /// Final-normed hidden states when every layer ran, otherwise the
    /// residual stream after the last computed layer.
    pub hidden: Matrix,
    pub cache: KvCache,
    pub layer_qk: LayerQk,
    /// Logits of the last position; present only for a full pass.
    pub logits: Option<ScoreVector>,
}

/// Prompt computation over layers `1..=upto_layer`, charged to `meter`.
pub fn prefill(
    tokens: &TokenSeq,
    weights: &ModelWeights,
    opts: PrefillOptions,
    meter: &mut Meter,
) -> Result<PrefillOutput> {
    let cfg = &weights.config;
    let upto = opts.upto_layer.unwrap_or(cfg.n_layers);
    if upto == 0 || upto > cfg.n_layers {
        return Err(contract(format!(
            "upto_layer must be in 1..={}, got {upto}",
            cfg.n_layers
        )));
    }
    if tokens.is_empty() {
        return Err(contract("prefill needs at least one token"));
    }
    if tokens.len() > cfg.max_seq {
        return Err(contract(format!(
            "prompt of {} tokens exceeds max_seq {}",
            tokens.len(),
            cfg.max_seq
        )));
    }
    let rope = rope_for(cfg)?;
    let mut x = embed(tokens, weights)?;
    let mut cache = KvCache {
        layers: Vec::new(),
        next_position: tokens.len(),
    };
    let mut layer_qk = None;
    for layer in 0..upto {
        let pass = layer_prefill(weights, layer, &mut x, rope.as_ref(), None, meter)?;
        let bytes = pass.kv.bytes();
        meter.kv.alloc(bytes);
        if opts.keep_cache {
            cache.layers.push(pass.kv);
        } else {
            meter.kv.free(bytes);
        }
        if layer + 1 == upto {
            layer_qk = Some(LayerQk {
                layer: layer + 1,
                q: pass.q,
                k: pass.k,
            });
        }
    }
    let layer_qk = layer_qk.expect("at least one layer ran");
    let (hidden, logits) = if upto == cfg.n_layers {
        let logits = last_row_logits(weights, &x, meter)?;
        (rms_norm_rows(&x, &weights.final_norm, cfg.norm_eps)?, Some(logits))
    } else {
        (x, None)
    };
    Ok(PrefillOutput {
        hidden,
        cache,
        layer_qk,
        logits,
    })
}

/// Appends one token to every layer's cache and returns next-token logits.
/// Works for full caches and for per-head compressed caches alike.
pub fn decode_step(
    token: u32,
    cache: &mut KvCache,
    weights: &ModelWeights,
    meter: &mut Meter,
) -> Result<ScoreVector> {
    let cfg = &weights.config;
    if cache.layers.len() != cfg.n_layers {
        return Err(contract(format!(
            "cache has {} layers, model has {}",
            cache.layers.len(),
            cfg.n_layers
        )));
    }
    if cache
        .layers
        .iter()
        .any(|l| l.heads.len() != cfg.n_kv_heads || l.heads.iter().any(|h| h.head_dim() != cfg.head_dim))
    {
        return Err(contract("cache head layout does not match the model"));
    }
    let pos = cache.next_position;
    if pos >= cfg.max_seq {
        return Err(contract(format!("position {pos} exceeds max_seq {}", cfg.max_seq)));
    }
    let rope = rope_for(cfg)?;
    let mut x = embed(&TokenSeq::new(vec![token]), weights)?;
    let (hd, groups) = (cfg.head_dim, cfg.groups());
    let mut scores = Vec::new();

    for (layer, lkv) in cache.layers.iter_mut().enumerate() {
        let lw = &weights.layers[layer];
        meter.touch_layer(layer);
        let xn = rms_norm_rows(&x, &lw.attn_norm, cfg.norm_eps)?;
        let mut q = matmul(&xn, &lw.wq, &mut meter.flops.projection)?;
        let mut k = matmul(&xn, &lw.wk, &mut meter.flops.projection)?;
        let v = matmul(&xn, &lw.wv, &mut meter.flops.projection)?;
        if let Some(rope) = &rope {
            rope.rotate_row(q.row_mut(0), pos as i64);
            rope.rotate_row(k.row_mut(0), pos as i64);
        }
        let mut attn = Matrix::zeros(1, cfg.q_dim());
        for (g, head) in lkv.heads.iter_mut().enumerate() {
            head.push(pos, &k.row(0)[g * hd..(g + 1) * hd], &v.row(0)[g * hd..(g + 1) * hd])?;
            meter.kv.alloc(2 * (hd * std::mem::size_of::<f32>()) as u64);
            let len = head.len();
            for qh in g * groups..(g + 1) * groups {
                attend_row(
                    &q.row(0)[qh * hd..(qh + 1) * hd],
                    &head.keys,
                    &head.values,
                    len,
                    &mut scores,
                    &mut attn.row_mut(0)[qh * hd..(qh + 1) * hd],
                );
                meter.flops.score += matmul_flops(1, hd, len);
                meter.flops.value += matmul_flops(1, len, hd);
            }
        }
        let o = matmul(&attn, &lw.wo, &mut meter.flops.projection)?;
        add_in_place(&mut x, &o);
        mlp_block(weights, layer, &mut x, meter)?;
    }
    cache.next_position += 1;
    last_row_logits(weights, &x, meter)
}

/// Greedy continuation from the prompt's last-position logits.
///
/// Produces up to `max_new` tokens. Every emitted token is fed back through
/// [`decode_step`], so after `t` tokens the cache holds `prompt + t`
/// positions. Stops early after emitting `stop`, if given.
pub fn generate_greedy(
    first_logits: &ScoreVector,
    cache: &mut KvCache,
    weights: &ModelWeights,
    max_new: usize,
    stop: Option<u32>,
    meter: &mut Meter,
) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(max_new);
    if max_new == 0 {
        return Ok(out);
    }
    let mut next = argmax(first_logits.values())? as u32;
    loop {
        out.push(next);
        if Some(next) == stop {
            break;
        }
        let logits = decode_step(next, cache, weights, meter)?;
        if out.len() == max_new {
            break;
        }
        next = argmax(logits.values())? as u32;
    }
    Ok(out)
}
