//! Plumbing around the engine: model files, tokenizer, test models, the
//! needle task and metrics output.

pub mod builders;
pub mod metrics;
pub mod modelfile;
pub mod needle;
pub mod tokenizer;

pub use builders::{copy_model_config, copy_model_token_order, make_copy_model, make_random_model};
pub use metrics::{write_ndjson, RunMetrics, RunParams, SelectionRecord, WallTimes};
pub use modelfile::{load_model, read_model, save_model, write_model, MAGIC};
pub use needle::{needle_run, needle_stats, LayerNeedleStat, NeedleInstance, NeedleReport, NeedleSpec, METRIC_HEADER};
pub use tokenizer::{detokenize, tokenize, VOCAB_SIZE};
