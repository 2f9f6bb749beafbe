//! Cost accounting: per-session counters, the closed-form complexity table,
//! and the verifier that reconciles the two.

mod meter;
mod table;
mod verify;

pub use meter::{FlopTally, MemTracker, Meter, Phase, PhaseCost};
pub use table::{cost_table, CostParams, CostTable, Method, MethodCost, PredictedPhase};
pub use verify::{verify_counters, CheckItem, MeasuredRun, Term, Tolerances, VerificationReport, WallRatio};

pub use crate::tensor::matmul_flops;
