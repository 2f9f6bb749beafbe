//! Decoder-only transformer inference with early-layer token selection
//! (GemFilter), SnapKV- and H2O-style KV compression baselines, and
//! phase-aware cost accounting.
//!
//! ```
//! use gemfilter::harness::{make_random_model, tokenize};
//! use gemfilter::model::ModelConfig;
//! use gemfilter::run::{run_strategy, Strategy};
//! use gemfilter::selection::SelectionParams;
//!
//! let cfg = ModelConfig::new(4, 2, 1, 16);
//! let weights = make_random_model(&cfg, 7).unwrap();
//! let prompt = tokenize(b"a short prompt");
//! let full = run_strategy(&weights, &prompt, &Strategy::Full, 4, None).unwrap();
//! let sel = Strategy::GemFilter(SelectionParams::new(2, prompt.len()));
//! let gem = run_strategy(&weights, &prompt, &sel, 4, None).unwrap();
//! assert_eq!(full.tokens, gem.tokens);
//! ```

pub mod cost;
mod error;
pub mod harness;
pub mod model;
pub mod par;
pub mod run;
pub mod selection;
pub mod strategies;
pub mod tensor;

pub use error::{Error, FormatError, Result};
