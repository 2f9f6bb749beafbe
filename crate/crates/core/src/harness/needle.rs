//! Synthetic needle-in-a-haystack task and the per-layer distance
//! diagnostic between the planted needle and the selected positions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{Meter, Phase};
use crate::error::{contract, Result};
use crate::model::{embed, layer_prefill, repeat_kv, rope_for, ModelWeights, TokenSeq};
use crate::run::{run_strategy, Strategy};
use crate::selection::{pick_indices, selection_gen, selection_scores, SelectionParams};

/// Printed above needle reports.
pub const METRIC_HEADER: &str = "\
# coverage: fraction of needle positions present in the selected set
# min_distance: smallest |j - p| over selected j and needle positions p (0 when any needle position is selected)
# generation_match: selection-based greedy continuation equals the full-model continuation
# exact synthetic metrics; no graded answer scoring";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedleSpec {
    pub haystack_len: usize,
    /// 0 to 100.
    pub depth_percent: u32,
    pub needle: TokenSeq,
    /// Appended after the haystack as the final prompt token.
    pub query: u32,
    /// Filler alphabet, sampled uniformly with `seed`.
    pub filler: Vec<u32>,
    pub seed: u64,
}

/// A built prompt: `haystack_len` filler/needle tokens plus the query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeedleInstance {
    pub prompt: TokenSeq,
    pub needle_start: usize,
    pub needle_len: usize,
}

impl NeedleInstance {
    pub fn needle_span(&self) -> std::ops::Range<usize> {
        self.needle_start..self.needle_start + self.needle_len
    }
}

impl NeedleSpec {
    pub fn insertion_index(&self) -> usize {
        (self.depth_percent as usize * (self.haystack_len - self.needle.len())) / 100
    }

    pub fn build(&self) -> Result<NeedleInstance> {
        if self.needle.is_empty() {
            return Err(contract("needle must not be empty"));
        }
        if self.needle.len() > self.haystack_len {
            return Err(contract(format!(
                "needle of {} tokens does not fit a haystack of {}",
                self.needle.len(),
                self.haystack_len
            )));
        }
        if self.depth_percent > 100 {
            return Err(contract(format!("depth must be 0..=100, got {}", self.depth_percent)));
        }
        if self.filler.is_empty() {
            return Err(contract("filler alphabet must not be empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut ids: Vec<u32> = (0..self.haystack_len)
            .map(|_| *self.filler.choose(&mut rng).expect("non-empty"))
            .collect();
        let start = self.insertion_index();
        ids[start..start + self.needle.len()].copy_from_slice(self.needle.ids());
        ids.push(self.query);
        Ok(NeedleInstance {
            prompt: TokenSeq::new(ids),
            needle_start: start,
            needle_len: self.needle.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNeedleStat {
    /// Filter layer, 1-based.
    pub layer: usize,
    pub coverage: f64,
    pub min_distance: usize,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleReport {
    pub haystack_len: usize,
    pub depth_percent: u32,
    pub needle_start: usize,
    pub needle_len: usize,
    pub budget: usize,
    pub layers: Vec<LayerNeedleStat>,
    /// Set only when a single filter layer was requested.
    pub filter_layer: Option<usize>,
    pub generation_match: Option<bool>,
    pub full_tokens: Option<Vec<u32>>,
    pub selection_tokens: Option<Vec<u32>>,
}

/// Coverage and minimum absolute distance of `indices` to `span`.
pub fn needle_stats(indices: &[usize], span: std::ops::Range<usize>) -> (f64, usize) {
    let len = span.len();
    let hit = indices.iter().filter(|i| span.contains(i)).count();
    let dist = indices
        .iter()
        .map(|&j| {
            if j < span.start {
                span.start - j
            } else if j >= span.end {
                j + 1 - span.end
            } else {
                0
            }
        })
        .min()
        .unwrap_or(usize::MAX);
    (hit as f64 / len as f64, dist)
}

/// Runs the selection pass once over layers `1..=max(r_list)` and scores
/// each requested layer. With a single layer, also compares selection-based
/// generation of `gen_tokens` tokens against the full model.
pub fn needle_run(
    spec: &NeedleSpec,
    weights: &ModelWeights,
    r_list: &[usize],
    params: &SelectionParams,
    gen_tokens: usize,
) -> Result<NeedleReport> {
    let cfg = &weights.config;
    let inst = spec.build()?;
    inst.prompt.check_vocab(cfg.vocab_size)?;
    let mut layers_wanted: Vec<usize> = r_list.to_vec();
    layers_wanted.sort_unstable();
    layers_wanted.dedup();
    match (layers_wanted.first(), layers_wanted.last()) {
        (Some(&lo), Some(&hi)) if lo >= 1 && hi <= cfg.n_layers => {}
        _ => {
            return Err(contract(format!(
                "filter layers must be non-empty and within 1..={}",
                cfg.n_layers
            )))
        }
    }
    let top = *layers_wanted.last().expect("non-empty");

    let rope = rope_for(cfg)?;
    let mut meter = Meter::new(Phase::Prompt, cfg);
    let mut x = embed(&inst.prompt, weights)?;
    let mut stats = Vec::with_capacity(layers_wanted.len());
    for layer in 0..top {
        let pass = layer_prefill(weights, layer, &mut x, rope.as_ref(), None, &mut meter)?;
        if !layers_wanted.contains(&(layer + 1)) {
            continue;
        }
        let keys = repeat_kv(&pass.k, cfg.n_kv_heads, cfg.head_dim, cfg.groups())?;
        let scores = selection_scores(
            &pass.q,
            &keys,
            cfg.n_heads,
            params.pool_kernel,
            params.pool_mode,
            &mut meter.flops.selection,
        )?;
        let indices = pick_indices(&scores, params)?;
        let (coverage, min_distance) = needle_stats(&indices, inst.needle_span());
        stats.push(LayerNeedleStat {
            layer: layer + 1,
            coverage,
            min_distance,
            indices,
        });
    }

    let mut report = NeedleReport {
        haystack_len: spec.haystack_len,
        depth_percent: spec.depth_percent,
        needle_start: inst.needle_start,
        needle_len: inst.needle_len,
        budget: params.budget,
        layers: stats,
        filter_layer: None,
        generation_match: None,
        full_tokens: None,
        selection_tokens: None,
    };
    if let [r] = layers_wanted[..] {
        let p = SelectionParams {
            filter_layer: r,
            ..*params
        };
        let sel = selection_gen(weights, &inst.prompt, &p, gen_tokens, None)?;
        let full = run_strategy(weights, &inst.prompt, &Strategy::Full, gen_tokens, None)?;
        report.filter_layer = Some(r);
        report.generation_match = Some(sel.tokens == full.tokens);
        report.full_tokens = Some(full.tokens);
        report.selection_tokens = Some(sel.tokens);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, depth: u32) -> NeedleSpec {
        NeedleSpec {
            haystack_len: n,
            depth_percent: depth,
            needle: TokenSeq::new(vec![9; 4]),
            query: 9,
            filler: vec![1, 2, 3],
            seed: 0,
        }
    }

    #[test]
    fn insertion_depths() {
        assert_eq!(spec(100, 0).insertion_index(), 0);
        assert_eq!(spec(100, 50).insertion_index(), 48);
        assert_eq!(spec(100, 100).insertion_index(), 96);
        let inst = spec(100, 100).build().unwrap();
        assert_eq!(inst.prompt.len(), 101);
        assert_eq!(&inst.prompt.ids()[96..], &[9, 9, 9, 9, 9]);
    }

    #[test]
    fn oversized_needle_rejected() {
        assert!(spec(3, 0).build().is_err());
    }

    #[test]
    fn stats_cases() {
        assert_eq!(needle_stats(&[10, 11, 12, 13], 10..14), (1.0, 0));
        assert_eq!(needle_stats(&[0, 12], 10..14), (0.25, 0));
        assert_eq!(needle_stats(&[3, 20], 10..14), (0.0, 7));
        assert_eq!(needle_stats(&[16], 10..14), (0.0, 3));
    }
}
