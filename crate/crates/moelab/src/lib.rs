//! moelab — a desk-scale laboratory for studying how mixture-of-experts
//! classifiers respond to expert-level compression.
//!
//! The crate trains small top-k-routed MoE classifiers on synthetic cluster
//! tasks, logs routing traces, scores experts by attribution (hard selection
//! counts or soft gate mass), prunes low-attribution experts, and recovers
//! the pruned model with pool-based active-learning fine-tuning. It also
//! implements two hardening levers: an entanglement regularizer that
//! flattens routing so no small expert subset carries the task, and
//! restricted fine-tuning scopes (down to adapter-only tuning).
//!
//! Everything is seeded and single-threaded; reports are byte-reproducible.
//!
//! Start with the runnable examples (`cargo run --release --example ...`),
//! or the `moelab` binary for the stage-by-stage command-line pipeline.

pub mod attribution;
pub mod bench;
pub mod cli;
pub mod error;
pub mod io;
pub mod moe;
pub mod num;
pub mod pruning;
pub mod realign;

pub use error::{Error, Result};
