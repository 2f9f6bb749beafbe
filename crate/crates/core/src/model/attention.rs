//! Causal grouped-query attention.
//!
//! Masked positions are excluded from the softmax normalization and never
//! enter any accumulation. Scores are accumulated key-by-key in ascending
//! `head_dim` order, and values in ascending key order, so the prefill path
//! (transposed keys, vectorized across keys) and the decode path (one dot per
//! key) produce bit-identical rows.

use crate::error::{config, contract, Result};
use crate::par;
use crate::tensor::{dot, softmax_in_place, Matrix};

/// Rows per block when attention probabilities are folded into an observer.
const OBSERVE_BLOCK: usize = 64;

#[inline]
pub(crate) fn attention_scale(head_dim: usize) -> f32 {
    1.0 / (head_dim as f32).sqrt()
}

/// `out = sum_j probs[j] * values[j]`, ascending `j`.
#[inline]
fn weighted_sum(probs: &[f32], values: &[f32], head_dim: usize, out: &mut [f32]) {
    out.fill(0.0);
    for (j, &p) in probs.iter().enumerate() {
        let v = &values[j * head_dim..(j + 1) * head_dim];
        for (o, &x) in out.iter_mut().zip(v) {
            *o += p * x;
        }
    }
}

/// One query row against the first `len` keys of a contiguous
/// `[len, head_dim]` buffer. Writes the output row and leaves the
/// probabilities in `scores[..len]`.
pub(crate) fn attend_row(
    q: &[f32],
    keys: &[f32],
    values: &[f32],
    len: usize,
    scores: &mut Vec<f32>,
    out: &mut [f32],
) {
    let head_dim = q.len();
    let scale = attention_scale(head_dim);
    scores.clear();
    scores.extend((0..len).map(|j| dot(q, &keys[j * head_dim..(j + 1) * head_dim]) * scale));
    softmax_in_place(scores);
    weighted_sum(scores, values, head_dim, out);
}

/// Row `i` of a causal prefill using keys transposed to `[head_dim, n]`.
fn prefill_row(
    i: usize,
    q: &[f32],
    keys_t: &[f32],
    values: &[f32],
    n: usize,
    scores: &mut Vec<f32>,
    out: &mut [f32],
) {
    let head_dim = q.len();
    let len = i + 1;
    scores.clear();
    scores.resize(len, 0.0);
    for (d, &qd) in q.iter().enumerate() {
        let k_row = &keys_t[d * n..d * n + len];
        for (s, &k) in scores.iter_mut().zip(k_row) {
            *s += qd * k;
        }
    }
    let scale = attention_scale(head_dim);
    for s in scores.iter_mut() {
        *s *= scale;
    }
    softmax_in_place(scores);
    weighted_sum(scores, values, head_dim, out);
}

fn transpose_flat(data: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0; data.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}

/// Probability mass received by each key from a range of query rows.
pub(crate) struct Observer<'a> {
    /// First query row whose probabilities are accumulated.
    pub from_row: usize,
    /// Per-key totals, length `n`.
    pub totals: &'a mut [f32],
}

/// Causal self-attention of one query head over its kv head for a whole
/// prompt. `q`, `k`, `v` are contiguous `[n, head_dim]` buffers.
pub(crate) fn prefill_head(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    n: usize,
    head_dim: usize,
    observer: Option<Observer<'_>>,
) -> Vec<f32> {
    let keys_t = transpose_flat(k, n, head_dim);
    let mut out = vec![0.0; n * head_dim];
    let plain_rows = observer.as_ref().map_or(n, |o| o.from_row.min(n));

    par::for_each_row_mut(&mut out[..plain_rows * head_dim], head_dim, |i, row| {
        let mut scores = Vec::with_capacity(i + 1);
        prefill_row(i, &q[i * head_dim..(i + 1) * head_dim], &keys_t, v, n, &mut scores, row);
    });

    if let Some(obs) = observer {
        let mut start = plain_rows;
        while start < n {
            let end = (start + OBSERVE_BLOCK).min(n);
            let block = par::map_range(end - start, |b| {
                let i = start + b;
                let mut scores = Vec::with_capacity(i + 1);
                let mut row = vec![0.0; head_dim];
                prefill_row(i, &q[i * head_dim..(i + 1) * head_dim], &keys_t, v, n, &mut scores, &mut row);
                (scores, row)
            });
            for (b, (probs, row)) in block.into_iter().enumerate() {
                let i = start + b;
                out[i * head_dim..(i + 1) * head_dim].copy_from_slice(&row);
                for (t, p) in obs.totals.iter_mut().zip(&probs) {
                    *t += p;
                }
            }
            start = end;
        }
    }
    out
}

/// Single-head causal attention. Query row `i` sits at absolute position
/// `k.rows() - q.rows() + i` and attends to keys at or before it.
pub fn causal_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
    if q.cols() != k.cols() || k.rows() != v.rows() || q.rows() > k.rows() {
        return Err(contract(format!(
            "attention shapes q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let offset = k.rows() - q.rows();
    let value_dim = v.cols();
    if q.cols() == value_dim && offset == 0 && q.rows() > 0 {
        let data = prefill_head(q.data(), k.data(), v.data(), q.rows(), q.cols(), None);
        return Matrix::new(q.rows(), value_dim, data);
    }
    let mut out = Matrix::zeros(q.rows(), value_dim);
    let mut scores = Vec::new();
    for i in 0..q.rows() {
        let len = offset + i + 1;
        let head_dim = q.cols();
        let scale = attention_scale(head_dim);
        scores.clear();
        scores.extend((0..len).map(|j| dot(q.row(i), k.row(j)) * scale));
        softmax_in_place(&mut scores);
        weighted_sum(&scores, &v.data()[..len * value_dim], value_dim, out.row_mut(i));
    }
    Ok(out)
}

/// Expands `[seq, n_kv_heads * head_dim]` keys or values so kv head `j`
/// serves query heads `j*groups .. (j+1)*groups`.
pub fn repeat_kv(kv: &Matrix, n_kv_heads: usize, head_dim: usize, groups: usize) -> Result<Matrix> {
    if groups == 0 {
        return Err(config("groups must be positive"));
    }
    if kv.cols() != n_kv_heads * head_dim {
        return Err(contract(format!(
            "kv width {} != {n_kv_heads} heads * {head_dim}",
            kv.cols()
        )));
    }
    let out_cols = n_kv_heads * groups * head_dim;
    let mut out = Matrix::zeros(kv.rows(), out_cols);
    for i in 0..kv.rows() {
        let src = kv.row(i);
        let dst = out.row_mut(i);
        for j in 0..n_kv_heads {
            let head = &src[j * head_dim..(j + 1) * head_dim];
            for g in 0..groups {
                let h = j * groups + g;
                dst[h * head_dim..(h + 1) * head_dim].copy_from_slice(head);
            }
        }
    }
    Ok(out)
}

/// Query heads per kv head, or a configuration error when not divisible.
pub fn kv_groups(n_heads: usize, n_kv_heads: usize) -> Result<usize> {
    if n_kv_heads == 0 || !n_heads.is_multiple_of(n_kv_heads) {
        return Err(config(format!(
            "n_heads {n_heads} not divisible by n_kv_heads {n_kv_heads}"
        )));
    }
    Ok(n_heads / n_kv_heads)
}

/// Grouped-query causal attention over a whole prompt. `q` is
/// `[n, n_heads * head_dim]`; `k`, `v` are `[n, n_kv_heads * head_dim]`.
pub fn grouped_causal_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    n_heads: usize,
    n_kv_heads: usize,
    head_dim: usize,
) -> Result<Matrix> {
    let groups = kv_groups(n_heads, n_kv_heads)?;
    let n = q.rows();
    if q.cols() != n_heads * head_dim
        || k.cols() != n_kv_heads * head_dim
        || v.cols() != k.cols()
        || k.rows() != n
        || v.rows() != n
    {
        return Err(contract("grouped attention shape mismatch"));
    }
    let mut out = Matrix::zeros(n, n_heads * head_dim);
    for kv_head in 0..n_kv_heads {
        let kh = k.column_block(kv_head * head_dim, head_dim);
        let vh = v.column_block(kv_head * head_dim, head_dim);
        for qh in kv_head * groups..(kv_head + 1) * groups {
            let qm = q.column_block(qh * head_dim, head_dim);
            let o = prefill_head(qm.data(), kh.data(), vh.data(), n, head_dim, None);
            for i in 0..n {
                out.row_mut(i)[qh * head_dim..(qh + 1) * head_dim]
                    .copy_from_slice(&o[i * head_dim..(i + 1) * head_dim]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    /// Builds the full masked score matrix and normalizes it explicitly.
    fn oracle(q: &Matrix, k: &Matrix, v: &Matrix) -> Matrix {
        let n = q.rows();
        let d = q.cols() as f64;
        let mut out = Matrix::zeros(n, v.cols());
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| {
                    if j > i {
                        f64::NEG_INFINITY
                    } else {
                        (0..q.cols())
                            .map(|c| q.get(i, c) as f64 * k.get(j, c) as f64)
                            .sum::<f64>()
                            / d.sqrt()
                    }
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in 0..v.cols() {
                let val: f64 = (0..n).map(|j| exps[j] / z * v.get(j, c) as f64).sum();
                out.set(i, c, val as f32);
            }
        }
        out
    }

    #[test]
    fn single_token_returns_value() {
        let q = Matrix::new(1, 2, vec![0.3, -0.2]).unwrap();
        let k = Matrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let v = Matrix::new(1, 2, vec![5.0, -7.0]).unwrap();
        assert_eq!(causal_attention(&q, &k, &v).unwrap(), v);
    }

    #[test]
    fn identical_keys_average_values() {
        let q = Matrix::new(1, 2, vec![0.7, 0.1]).unwrap();
        let k = Matrix::new(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let v = Matrix::new(2, 2, vec![2.0, 4.0, 6.0, 8.0]).unwrap();
        let out = causal_attention(&q, &k, &v).unwrap();
        assert!((out.get(0, 0) - 4.0).abs() < 1e-6);
        assert!((out.get(0, 1) - 6.0).abs() < 1e-6);
    }

    #[test]
    fn matches_masked_softmax_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (q, k, v) = (random(4, 6, &mut rng), random(4, 6, &mut rng), random(4, 6, &mut rng));
        let got = causal_attention(&q, &k, &v).unwrap();
        let want = oracle(&q, &k, &v);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn decode_rows_match_prefill_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (q, k, v) = (random(9, 8, &mut rng), random(9, 8, &mut rng), random(9, 8, &mut rng));
        let full = causal_attention(&q, &k, &v).unwrap();
        let last = Matrix::new(1, 8, q.row(8).to_vec()).unwrap();
        let dec = causal_attention(&last, &k, &v).unwrap();
        assert_eq!(dec.row(0), full.row(8));
    }

    #[test]
    fn observer_sums_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 70;
        let (q, k, v) = (random(n, 4, &mut rng), random(n, 4, &mut rng), random(n, 4, &mut rng));
        let mut totals = vec![0.0; n];
        let observed = prefill_head(
            q.data(),
            k.data(),
            v.data(),
            n,
            4,
            Some(Observer { from_row: 3, totals: &mut totals }),
        );
        let plain = prefill_head(q.data(), k.data(), v.data(), n, 4, None);
        assert_eq!(observed, plain);
        let mass: f32 = totals.iter().sum();
        assert!((mass - (n - 3) as f32).abs() < 1e-3);
    }

    #[test]
    fn repeat_kv_layout() {
        let kv = Matrix::new(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(repeat_kv(&kv, 2, 2, 1).unwrap(), kv);
        let r = repeat_kv(&kv, 2, 2, 2).unwrap();
        assert_eq!(r.row(0), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]);
        assert!(kv_groups(4, 3).is_err());
    }

    #[test]
    fn grouped_equals_explicit_repeat() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, h, hkv, hd) = (6, 4, 2, 4);
        let q = random(n, h * hd, &mut rng);
        let k = random(n, hkv * hd, &mut rng);
        let v = random(n, hkv * hd, &mut rng);
        let grouped = grouped_causal_attention(&q, &k, &v, h, hkv, hd).unwrap();
        let kr = repeat_kv(&k, hkv, hd, h / hkv).unwrap();
        let vr = repeat_kv(&v, hkv, hd, h / hkv).unwrap();
        for head in 0..h {
            let o = causal_attention(
                &q.column_block(head * hd, hd),
                &kr.column_block(head * hd, hd),
                &vr.column_block(head * hd, hd),
            )
            .unwrap();
            for i in 0..n {
                for c in 0..hd {
                    assert!((o.get(i, c) - grouped.get(i, head * hd + c)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Matrix::zeros(3, 2);
        let b = Matrix::zeros(2, 2);
        assert!(causal_attention(&a, &b, &b).is_err());
    }
}
