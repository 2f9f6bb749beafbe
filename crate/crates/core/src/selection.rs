//! Early-layer token selection: run the first `r` layers, score every
//! prompt position by the last query's inner products summed over heads,
//! keep the top `k` positions in their original order, and regenerate from
//! that sub-sequence with the full model.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cost::{matmul_flops, Meter, Phase, PhaseCost};
use crate::error::{contract, Result};
use crate::model::{generate_greedy, prefill, repeat_kv, ModelWeights, PrefillOptions, TokenSeq};
use crate::tensor::{dot, pool_1d, topk_indices, Matrix, PoolMode, ScoreVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionParams {
    /// Filter layer `r`, 1-based.
    pub filter_layer: usize,
    /// Number of tokens to keep, `k`. Clamped to the prompt length.
    pub budget: usize,
    pub pool_kernel: usize,
    pub pool_mode: PoolMode,
    /// Always keep position 0.
    pub force_first: bool,
}

impl SelectionParams {
    pub fn new(filter_layer: usize, budget: usize) -> Self {
        Self {
            filter_layer,
            budget,
            pool_kernel: 5,
            pool_mode: PoolMode::Average,
            force_first: false,
        }
    }
}

/// A single index set shared by every layer and head of the second pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Strictly increasing prompt positions.
    pub indices: Vec<usize>,
    /// Head-summed, pooled scores for every prompt position.
    pub raw_scores: ScoreVector,
    pub filter_layer: usize,
    pub budget: usize,
}

/// Head-summed last-row inner products, pooled.
///
/// `layer_q` is `[n, n_heads * head_dim]`; `layer_k` must already be
/// expanded to the same number of heads. Raw inner products are used: no
/// softmax and no `1/sqrt(d)`, neither of which changes the top-k order.
pub fn selection_scores(
    layer_q: &Matrix,
    layer_k: &Matrix,
    n_heads: usize,
    pool_kernel: usize,
    pool_mode: PoolMode,
    flops: &mut u64,
) -> Result<ScoreVector> {
    if n_heads == 0 || !layer_q.cols().is_multiple_of(n_heads) {
        return Err(contract("query width is not a multiple of the head count"));
    }
    if layer_k.cols() != layer_q.cols() {
        return Err(contract(format!(
            "key width {} does not match query width {} (expand kv heads first)",
            layer_k.cols(),
            layer_q.cols()
        )));
    }
    if layer_q.rows() == 0 || layer_k.rows() == 0 {
        return Err(contract("selection needs at least one position"));
    }
    let hd = layer_q.cols() / n_heads;
    let n = layer_k.rows();
    let last = layer_q.row(layer_q.rows() - 1);
    let summed: Vec<f32> = (0..n)
        .map(|i| {
            let key = layer_k.row(i);
            let mut acc = 0.0f32;
            for h in 0..n_heads {
                acc += dot(&last[h * hd..(h + 1) * hd], &key[h * hd..(h + 1) * hd]);
            }
            acc
        })
        .collect();
    *flops += n_heads as u64 * matmul_flops(1, hd, n);
    ScoreVector::new(pool_1d(&summed, pool_kernel, pool_mode)?)
}

/// Top `min(k, n)` positions of pooled scores, sorted into prompt order.
pub fn pick_indices(scores: &ScoreVector, params: &SelectionParams) -> Result<Vec<usize>> {
    if params.budget == 0 {
        return Err(contract("selection budget must be at least 1"));
    }
    let k = params.budget.min(scores.len());
    let mut indices = topk_indices(scores.values(), k)?;
    if params.force_first && !indices.contains(&0) {
        // descending-score order: the last entry is the weakest pick
        *indices.last_mut().expect("k >= 1") = 0;
    }
    indices.sort_unstable();
    Ok(indices)
}

/// First pass: layers `1..=r` only, then the top-`k` positions sorted back
/// into prompt order. Charges `r` layers of prompt cost to `meter`.
pub fn select_indices(
    weights: &ModelWeights,
    tokens: &TokenSeq,
    params: &SelectionParams,
    meter: &mut Meter,
) -> Result<SelectionResult> {
    let cfg = &weights.config;
    if params.filter_layer == 0 || params.filter_layer > cfg.n_layers {
        return Err(contract(format!(
            "filter layer must be in 1..={}, got {}",
            cfg.n_layers, params.filter_layer
        )));
    }
    if params.budget == 0 {
        return Err(contract("selection budget must be at least 1"));
    }
    let out = prefill(
        tokens,
        weights,
        PrefillOptions {
            upto_layer: Some(params.filter_layer),
            keep_cache: false,
        },
        meter,
    )?;
    let keys = repeat_kv(&out.layer_qk.k, cfg.n_kv_heads, cfg.head_dim, cfg.groups())?;
    let scores = selection_scores(
        &out.layer_qk.q,
        &keys,
        cfg.n_heads,
        params.pool_kernel,
        params.pool_mode,
        &mut meter.flops.selection,
    )?;
    let indices = pick_indices(&scores, params)?;
    Ok(SelectionResult {
        indices,
        raw_scores: scores,
        filter_layer: params.filter_layer,
        budget: params.budget,
    })
}

/// The selected sub-sequence in prompt order.
pub fn decode_selection(tokens: &TokenSeq, sel: &SelectionResult) -> Result<TokenSeq> {
    sel.indices
        .iter()
        .map(|&i| {
            tokens
                .ids()
                .get(i)
                .copied()
                .ok_or_else(|| contract(format!("selected index {i} outside prompt of {}", tokens.len())))
        })
        .collect::<Result<Vec<_>>>()
        .map(TokenSeq::new)
}

#[derive(Debug, Clone)]
pub struct SelectionGenOutput {
    pub tokens: Vec<u32>,
    pub selection: SelectionResult,
    /// Selection pass (prompt computation over `r` layers).
    pub prompt: PhaseCost,
    /// Full-model prefill over the selected tokens plus greedy decoding.
    pub generation: PhaseCost,
}

/// Both passes end to end. The second pass re-encodes the selected tokens
/// at fresh positions `0..k`.
pub fn selection_gen(
    weights: &ModelWeights,
    tokens: &TokenSeq,
    params: &SelectionParams,
    max_new: usize,
    stop: Option<u32>,
) -> Result<SelectionGenOutput> {
    let cfg = &weights.config;
    let started = Instant::now();
    let mut meter = Meter::new(Phase::Prompt, cfg);
    let selection = select_indices(weights, tokens, params, &mut meter)?;
    let prompt = meter.finish(started.elapsed());

    if max_new == 0 {
        return Ok(SelectionGenOutput {
            tokens: Vec::new(),
            selection,
            prompt,
            generation: PhaseCost::zero(Phase::Generation),
        });
    }
    let started = Instant::now();
    let mut meter = Meter::new(Phase::Generation, cfg);
    let sub = decode_selection(tokens, &selection)?;
    let mut out = prefill(&sub, weights, PrefillOptions::default(), &mut meter)?;
    let logits = out.logits.take().expect("full pass yields logits");
    let generated = generate_greedy(&logits, &mut out.cache, weights, max_new, stop, &mut meter)?;
    Ok(SelectionGenOutput {
        tokens: generated,
        selection,
        prompt,
        generation: meter.finish(started.elapsed()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_keys_pick_the_match() {
        // single head, query equals key row 2, other keys orthogonal
        let q = Matrix::from_rows(&[vec![0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let k = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 1.0],
        ])
        .unwrap();
        let mut flops = 0;
        let s = selection_scores(&q, &k, 1, 1, PoolMode::Average, &mut flops).unwrap();
        assert_eq!(s.values(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(crate::tensor::argmax(s.values()).unwrap(), 2);
        assert_eq!(flops, 2 * 3 * 4);
    }

    #[test]
    fn duplicated_heads_scale_scores() {
        let q1 = Matrix::from_rows(&[vec![0.5, -1.0]]).unwrap();
        let k1 = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![2.0, -2.0]]).unwrap();
        let dup = |m: &Matrix| {
            Matrix::from_rows(
                &(0..m.rows())
                    .map(|i| [m.row(i), m.row(i), m.row(i)].concat())
                    .collect::<Vec<_>>(),
            )
            .unwrap()
        };
        let mut f = 0;
        let one = selection_scores(&q1, &k1, 1, 1, PoolMode::Average, &mut f).unwrap();
        let three = selection_scores(&dup(&q1), &dup(&k1), 3, 1, PoolMode::Average, &mut f).unwrap();
        for (a, b) in one.values().iter().zip(three.values()) {
            assert!((3.0 * a - b).abs() < 1e-6);
        }
        assert_eq!(
            topk_indices(one.values(), 2).unwrap(),
            topk_indices(three.values(), 2).unwrap()
        );
    }

    #[test]
    fn pooling_spreads_spike() {
        let q = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let k = Matrix::from_rows(&(0..9).map(|i| vec![if i == 4 { 5.0 } else { 0.0 }]).collect::<Vec<_>>())
            .unwrap();
        let mut f = 0;
        let s = selection_scores(&q, &k, 1, 5, PoolMode::Average, &mut f).unwrap();
        assert_eq!(s.values(), &[0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn unexpanded_keys_rejected() {
        let q = Matrix::zeros(2, 4);
        let k = Matrix::zeros(2, 2);
        let mut f = 0;
        assert!(selection_scores(&q, &k, 2, 1, PoolMode::Average, &mut f).is_err());
    }

    #[test]
    fn decode_selection_cases() {
        let t = TokenSeq::new(vec![5, 6, 7]);
        let sel = |indices: Vec<usize>| SelectionResult {
            indices,
            raw_scores: ScoreVector::new(vec![0.0; 3]).unwrap(),
            filter_layer: 1,
            budget: 3,
        };
        assert_eq!(decode_selection(&t, &sel(vec![0, 1, 2])).unwrap(), t);
        assert_eq!(decode_selection(&t, &sel(vec![0])).unwrap().ids(), &[5]);
        assert!(decode_selection(&t, &sel(vec![3])).is_err());
    }
}
