//! Knowledge-augmented end-to-end coreference resolution.
//!
//! The crate trains span-ranking coreference models whose span
//! representations are shaped by concept knowledge through two auxiliary
//! objectives: a retrofitting loss pulling the attention-weighted span
//! vectors toward a knowledge-derived distance, and a scaffolding loss that
//! asks a linear classifier to recover the concept from the same vectors.
//!
//! Modules, bottom-up:
//!
//! - [`corpus`]: documents, spans, gold clusters, wordpiece tokenizer
//! - [`lexicon`]: concept lexicons and exact / overlap matchers
//! - [`tape`]: a small reverse-mode automatic differentiation tape
//! - [`model`]: token encoder, span representations, mention / pair scorers
//! - [`losses`]: coreference, retrofitting and scaffolding losses
//! - [`training`]: parameters, optimizer, phase schedule, gradient checks
//! - [`eval`]: decoding, MUC / B³ / CEAF-e, evaluation slices
//! - [`toolkit`]: offset PCA diagnostics, synthetic corpora, CLI pipeline

pub mod corpus;
pub mod error;
pub mod eval;
pub mod exec;
pub mod lexicon;
pub mod losses;
pub mod model;
pub mod tape;
pub mod toolkit;
pub mod training;

pub use error::{Error, Result};
pub use exec::Execution;
