//! Per-session instrumentation. Every engine path charges its matmuls, KV
//! allocations and weight reads to the active [`Meter`].

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Prompt,
    Generation,
}

/// Matmul FLOPs split by the product they came from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopTally {
    /// Query-key products (attention scores).
    pub score: u64,
    /// Probability-value products.
    pub value: u64,
    /// Q, K, V and output projections.
    pub projection: u64,
    pub mlp: u64,
    /// Output embedding (logits).
    pub lm_head: u64,
    /// Last-row inner products used for token selection.
    pub selection: u64,
}

impl FlopTally {
    pub fn attention(&self) -> u64 {
        self.score + self.value
    }

    /// FLOPs spent inside transformer layers.
    pub fn layer(&self) -> u64 {
        self.score + self.value + self.projection + self.mlp
    }

    pub fn total(&self) -> u64 {
        self.layer() + self.lm_head + self.selection
    }

    pub fn add(&mut self, other: &FlopTally) {
        self.score += other.score;
        self.value += other.value;
        self.projection += other.projection;
        self.mlp += other.mlp;
        self.lm_head += other.lm_head;
        self.selection += other.selection;
    }
}

/// Live and peak byte counts for KV storage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemTracker {
    live: u64,
    peak: u64,
}

impl MemTracker {
    pub fn alloc(&mut self, bytes: u64) {
        self.live += bytes;
        self.peak = self.peak.max(self.live);
    }

    pub fn free(&mut self, bytes: u64) {
        debug_assert!(bytes <= self.live, "freeing more than is live");
        self.live = self.live.saturating_sub(bytes);
    }

    pub fn live(&self) -> u64 {
        self.live
    }

    pub fn peak(&self) -> u64 {
        self.peak
    }
}

/// Accumulates the cost of one phase of one session.
#[derive(Debug, Clone)]
pub struct Meter {
    pub phase: Phase,
    pub flops: FlopTally,
    pub kv: MemTracker,
    layers_touched: Vec<bool>,
    layer_weight_bytes: u64,
}

impl Meter {
    pub fn new(phase: Phase, config: &ModelConfig) -> Self {
        Self {
            phase,
            flops: FlopTally::default(),
            kv: MemTracker::default(),
            layers_touched: vec![false; config.n_layers],
            layer_weight_bytes: config.layer_weight_bytes(),
        }
    }

    /// A meter for the next phase that inherits `live` bytes of KV already
    /// resident. The peak only registers once the new phase allocates.
    pub fn carry_over(phase: Phase, config: &ModelConfig, live: u64) -> Self {
        let mut m = Self::new(phase, config);
        m.kv.live = live;
        m
    }

    pub fn touch_layer(&mut self, layer: usize) {
        if let Some(slot) = self.layers_touched.get_mut(layer) {
            *slot = true;
        }
    }

    pub fn layers_touched(&self) -> usize {
        self.layers_touched.iter().filter(|t| **t).count()
    }

    /// Distinct transformer-layer weight bytes read during the phase.
    pub fn weight_bytes_touched(&self) -> u64 {
        self.layers_touched() as u64 * self.layer_weight_bytes
    }

    pub fn finish(&self, wall_time: Duration) -> PhaseCost {
        PhaseCost {
            phase: self.phase,
            flops: self.flops,
            matmul_flops: self.flops.total(),
            kv_bytes_peak: self.kv.peak(),
            weight_bytes_touched: self.weight_bytes_touched(),
            wall_time: wall_time.as_secs_f64(),
        }
    }
}

/// Completed cost record of one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCost {
    pub phase: Phase,
    pub flops: FlopTally,
    pub matmul_flops: u64,
    pub kv_bytes_peak: u64,
    pub weight_bytes_touched: u64,
    /// Seconds.
    pub wall_time: f64,
}

impl PhaseCost {
    pub fn zero(phase: Phase) -> Self {
        Self {
            phase,
            flops: FlopTally::default(),
            matmul_flops: 0,
            kv_bytes_peak: 0,
            weight_bytes_touched: 0,
            wall_time: 0.0,
        }
    }
}
