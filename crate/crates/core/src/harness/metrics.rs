//! Newline-delimited JSON run records.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cost::PhaseCost;
use crate::error::Result;
use crate::model::ModelConfig;
use crate::run::RunOutput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunParams {
    pub n: usize,
    pub k: Option<usize>,
    pub t: usize,
    pub r: Option<usize>,
    pub m: usize,
    pub h: usize,
    pub d: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_distance: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallTimes {
    pub prompt: f64,
    pub generation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run_id: String,
    pub strategy: String,
    pub params: RunParams,
    pub phase_costs: Vec<PhaseCost>,
    pub selection: SelectionRecord,
    pub output_tokens: Vec<u32>,
    pub wall_times: WallTimes,
}

impl RunMetrics {
    /// `timing = false` zeroes every wall time so records are reproducible
    /// byte for byte.
    pub fn from_run(out: &RunOutput, cfg: &ModelConfig, n: usize, seed: u64, timing: bool) -> Self {
        let k = out.strategy.budget();
        let r = out.selection.as_ref().map(|s| s.filter_layer);
        let t = out.tokens.len();
        let mut phase_costs = vec![out.prompt.clone(), out.generation.clone()];
        if !timing {
            for p in &mut phase_costs {
                p.wall_time = 0.0;
            }
        }
        let opt = |v: Option<usize>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
        RunMetrics {
            run_id: format!(
                "{}-n{n}-k{}-t{t}-r{}-seed{seed}",
                out.strategy.name(),
                opt(k),
                opt(r)
            ),
            strategy: out.strategy.name().to_string(),
            params: RunParams {
                n,
                k,
                t,
                r,
                m: cfg.n_layers,
                h: cfg.n_heads,
                d: cfg.head_dim,
            },
            wall_times: WallTimes {
                prompt: phase_costs[0].wall_time,
                generation: phase_costs[1].wall_time,
            },
            phase_costs,
            selection: SelectionRecord {
                indices: out.selection.as_ref().map(|s| s.indices.clone()),
                ..Default::default()
            },
            output_tokens: out.tokens.clone(),
        }
    }
}

/// Writes one JSON document followed by a newline.
pub fn write_ndjson<W: Write, T: Serialize>(mut w: W, record: &T) -> Result<()> {
    serde_json::to_writer(&mut w, record)?;
    w.write_all(b"\n")?;
    Ok(())
}
