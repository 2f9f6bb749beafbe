//! Oracles shared by the integration suites.
#![allow(dead_code, clippy::needless_range_loop)]

use gemfilter::cost::{Meter, Phase};
use gemfilter::model::{prefill, ModelWeights, PrefillOptions, TokenSeq};
use gemfilter::strategies::EvictionPolicyParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tokens(n: usize, seed: u64) -> TokenSeq {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TokenSeq::new((0..n).map(|_| rng.gen_range(0..256)).collect())
}

/// Explicit `[n, n]` masked attention probabilities of one query head in
/// the first layer, in f64.
pub fn layer_one_probs(w: &ModelWeights, t: &TokenSeq, head: usize) -> Vec<Vec<f64>> {
    let cfg = &w.config;
    let mut meter = Meter::new(Phase::Prompt, cfg);
    let opts = PrefillOptions {
        upto_layer: Some(1),
        keep_cache: false,
    };
    let out = prefill(t, w, opts, &mut meter).unwrap();
    let hd = cfg.head_dim;
    let kv_head = head / cfg.groups();
    let n = t.len();
    (0..n)
        .map(|i| {
            let q = &out.layer_qk.q.row(i)[head * hd..(head + 1) * hd];
            let logits: Vec<f64> = (0..=i)
                .map(|j| {
                    let k = &out.layer_qk.k.row(j)[kv_head * hd..(kv_head + 1) * hd];
                    q.iter().zip(k).map(|(a, b)| *a as f64 * *b as f64).sum::<f64>() / (hd as f64).sqrt()
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            let mut row: Vec<f64> = exps.iter().map(|e| e / z).collect();
            row.resize(n, 0.0);
            row
        })
        .collect()
}

/// Per kv head: attention mass each key receives from rows `from..n`,
/// summed over the group's query heads.
pub fn received_mass(w: &ModelWeights, t: &TokenSeq, from: usize) -> Vec<Vec<f64>> {
    let cfg = &w.config;
    let n = t.len();
    (0..cfg.n_kv_heads)
        .map(|g| {
            let mut totals = vec![0.0; n];
            for head in g * cfg.groups()..(g + 1) * cfg.groups() {
                let probs = layer_one_probs(w, t, head);
                for row in &probs[from..] {
                    for (t, p) in totals.iter_mut().zip(row) {
                        *t += p;
                    }
                }
            }
            totals
        })
        .collect()
}

pub fn sorted_top(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn snapkv_oracle(mass: &[f64], k: usize, p: &EvictionPolicyParams) -> Vec<usize> {
    let n = mass.len();
    if k >= n {
        return (0..n).collect();
    }
    let prefix = n - p.observation_window;
    let half = p.pool_kernel / 2;
    let pooled: Vec<f64> = (0..prefix)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(prefix - 1);
            mass[lo..=hi].iter().sum::<f64>() / p.pool_kernel as f64
        })
        .collect();
    let mut keep = sorted_top(&pooled, k - p.observation_window);
    keep.extend(prefix..n);
    keep.sort_unstable();
    keep
}

pub fn h2o_oracle(mass: &[f64], k: usize, p: &EvictionPolicyParams) -> Vec<usize> {
    let n = mass.len();
    if k >= n {
        return (0..n).collect();
    }
    let prefix = n - p.recent_keep;
    let mut keep = sorted_top(&mass[..prefix], k - p.recent_keep);
    keep.extend(prefix..n);
    keep.sort_unstable();
    keep
}


/// Full masked score matrix, explicitly normalized, in f64.
pub fn masked_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = q[0].len() as f64;
    let n = q.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let scores: Vec<f64> = (0..n)
            .map(|j| {
                if j > i {
                    f64::NEG_INFINITY
                } else {
                    q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / d.sqrt()
                }
            })
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let mut row = vec![0.0; v[0].len()];
        for (j, e) in exps.iter().enumerate() {
            for (o, x) in row.iter_mut().zip(&v[j]) {
                *o += e / z * x;
            }
        }
        out.push(row);
    }
    out
}

/// Indices in descending value order, ties to the lower index.
pub fn sort_top_f32(v: &[f32], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Explicitly zero-padded copy, then a plain windowed sum.
pub fn pool_oracle(v: &[f32], kernel: usize) -> Vec<f32> {
    let half = kernel / 2;
    let mut padded = vec![0.0f32; half];
    padded.extend_from_slice(v);
    padded.extend(std::iter::repeat_n(0.0, half));
    (0..v.len())
        .map(|i| {
            let mut s = 0.0f32;
            for x in &padded[i..i + kernel] {
                s += x;
            }
            s / kernel as f32
        })
        .collect()
}
