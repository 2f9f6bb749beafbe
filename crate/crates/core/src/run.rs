//! One generation run under a chosen long-context strategy, with costs split
//! into prompt computation and iterative generation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cost::{Meter, Phase, PhaseCost};
use crate::error::Result;
use crate::model::{generate_greedy, prefill, ModelWeights, PrefillOptions, TokenSeq};
use crate::selection::{selection_gen, SelectionParams, SelectionResult};
use crate::strategies::{prefill_compressed, Compression, EvictionPolicyParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Strategy {
    /// Standard attention with the whole KV cache.
    Full,
    GemFilter(SelectionParams),
    SnapKv {
        budget: usize,
        params: EvictionPolicyParams,
    },
    H2o {
        budget: usize,
        params: EvictionPolicyParams,
    },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Full => "full",
            Strategy::GemFilter(_) => "gemfilter",
            Strategy::SnapKv { .. } => "snapkv",
            Strategy::H2o { .. } => "h2o",
        }
    }

    /// Selection or cache budget, if the strategy has one.
    pub fn budget(&self) -> Option<usize> {
        match self {
            Strategy::Full => None,
            Strategy::GemFilter(p) => Some(p.budget),
            Strategy::SnapKv { budget, .. } | Strategy::H2o { budget, .. } => Some(*budget),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub strategy: Strategy,
    pub tokens: Vec<u32>,
    pub prompt: PhaseCost,
    pub generation: PhaseCost,
    pub selection: Option<SelectionResult>,
}

/// Greedy generation of `max_new` tokens from `prompt`.
pub fn run_strategy(
    weights: &ModelWeights,
    prompt: &TokenSeq,
    strategy: &Strategy,
    max_new: usize,
    stop: Option<u32>,
) -> Result<RunOutput> {
    let cfg = &weights.config;
    match strategy {
        Strategy::Full => {
            let started = Instant::now();
            let mut meter = Meter::new(Phase::Prompt, cfg);
            let mut out = prefill(prompt, weights, PrefillOptions::default(), &mut meter)?;
            let prompt_cost = meter.finish(started.elapsed());
            let logits = out.logits.take().expect("full pass yields logits");
            let (tokens, generation) =
                continue_generation(weights, &logits, &mut out.cache, meter.kv.live(), max_new, stop)?;
            Ok(RunOutput {
                strategy: *strategy,
                tokens,
                prompt: prompt_cost,
                generation,
                selection: None,
            })
        }
        Strategy::GemFilter(params) => {
            let out = selection_gen(weights, prompt, params, max_new, stop)?;
            Ok(RunOutput {
                strategy: *strategy,
                tokens: out.tokens,
                prompt: out.prompt,
                generation: out.generation,
                selection: Some(out.selection),
            })
        }
        Strategy::SnapKv { budget, params } | Strategy::H2o { budget, params } => {
            let method = match strategy {
                Strategy::SnapKv { .. } => Compression::SnapKv,
                _ => Compression::H2o,
            };
            let started = Instant::now();
            let mut meter = Meter::new(Phase::Prompt, cfg);
            let (mut compressed, logits) =
                prefill_compressed(prompt, weights, method, *budget, params, &mut meter)?;
            let prompt_cost = meter.finish(started.elapsed());
            let (tokens, generation) = continue_generation(
                weights,
                &logits,
                &mut compressed.cache,
                meter.kv.live(),
                max_new,
                stop,
            )?;
            Ok(RunOutput {
                strategy: *strategy,
                tokens,
                prompt: prompt_cost,
                generation,
                selection: None,
            })
        }
    }
}

fn continue_generation(
    weights: &ModelWeights,
    logits: &crate::tensor::ScoreVector,
    cache: &mut crate::model::KvCache,
    live_bytes: u64,
    max_new: usize,
    stop: Option<u32>,
) -> Result<(Vec<u32>, PhaseCost)> {
    if max_new == 0 {
        return Ok((Vec::new(), PhaseCost::zero(Phase::Generation)));
    }
    let started = Instant::now();
    let mut meter = Meter::carry_over(Phase::Generation, &weights.config, live_bytes);
    let tokens = generate_greedy(logits, cache, weights, max_new, stop, &mut meter)?;
    Ok((tokens, meter.finish(started.elapsed())))
}
