//! Measured counters against the closed-form table.

use serde::{Deserialize, Serialize};

use crate::cost::{CostTable, Method, Phase, PhaseCost, PredictedPhase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    ScoreMatmul,
    ValueMatmul,
    Projection,
    Mlp,
    LmHead,
    Selection,
    TotalFlops,
    KvBytes,
    WeightBytes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckItem {
    pub method: Method,
    pub phase: Phase,
    pub term: Term,
    pub predicted: u64,
    pub measured: u64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative tolerance on wall-time ratios.
    pub wall_ratio: f64,
    /// Wall-time ratios are only asserted for prompts at least this long.
    pub wall_min_n: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            wall_ratio: 0.25,
            wall_min_n: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallRatio {
    /// Measured prompt wall time, standard / gemfilter.
    pub measured: f64,
    /// Asymptotic prediction, `m / r`.
    pub predicted: f64,
    /// `None` when below the size threshold (reported only).
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub items: Vec<CheckItem>,
    pub wall_ratio: Option<WallRatio>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.pass)
            && self.wall_ratio.as_ref().and_then(|w| w.pass).unwrap_or(true)
    }

    /// Items whose measured value diverged from the prediction.
    pub fn failures(&self) -> Vec<&CheckItem> {
        self.items.iter().filter(|i| !i.pass).collect()
    }
}

/// Measured costs of one method's run.
#[derive(Debug, Clone)]
pub struct MeasuredRun {
    pub method: Method,
    pub prompt: PhaseCost,
    pub generation: PhaseCost,
}

fn compare(method: Method, phase: Phase, predicted: &PredictedPhase, measured: &PhaseCost, out: &mut Vec<CheckItem>) {
    let (p, m) = (&predicted.flops, &measured.flops);
    let terms = [
        (Term::ScoreMatmul, p.score, m.score),
        (Term::ValueMatmul, p.value, m.value),
        (Term::Projection, p.projection, m.projection),
        (Term::Mlp, p.mlp, m.mlp),
        (Term::LmHead, p.lm_head, m.lm_head),
        (Term::Selection, p.selection, m.selection),
        (Term::TotalFlops, p.total(), measured.matmul_flops),
        (Term::KvBytes, predicted.kv_bytes_peak, measured.kv_bytes_peak),
        (Term::WeightBytes, predicted.weight_bytes, measured.weight_bytes_touched),
    ];
    out.extend(terms.into_iter().map(|(term, predicted, measured)| CheckItem {
        method,
        phase,
        term,
        predicted,
        measured,
        pass: predicted == measured,
    }));
}

/// Exact comparison of every counter; wall-time ratio checked only at
/// desk-scale-meaningful prompt lengths.
pub fn verify_counters(measured: &[MeasuredRun], table: &CostTable, tol: &Tolerances) -> VerificationReport {
    let mut items = Vec::new();
    for run in measured {
        let row = table.get(run.method);
        compare(run.method, Phase::Prompt, &row.prompt, &run.prompt, &mut items);
        compare(run.method, Phase::Generation, &row.generation, &run.generation, &mut items);
    }
    let find = |m: Method| measured.iter().find(|r| r.method == m);
    let wall_ratio = match (find(Method::Standard), find(Method::GemFilter)) {
        (Some(std), Some(gem)) if gem.prompt.wall_time > 0.0 => {
            let measured = std.prompt.wall_time / gem.prompt.wall_time;
            let predicted = table.prompt_speedup_theta();
            let pass = (table.params.n >= tol.wall_min_n)
                .then(|| (measured - predicted).abs() <= tol.wall_ratio * predicted);
            Some(WallRatio {
                measured,
                predicted,
                pass,
            })
        }
        _ => None,
    };
    VerificationReport { items, wall_ratio }
}
