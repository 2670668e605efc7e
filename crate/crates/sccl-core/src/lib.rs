//! Dual-route sentiment classifier over pre-tokenized text.
//!
//! The text route embeds characters, encodes them with a bidirectional GRU,
//! and extracts local structure with a capsule layer routed by agreement.
//! The sentiment route matches tokens against a polarity lexicon (expandable
//! from seed words by co-occurrence statistics) and runs the matched
//! sequence through a small convolutional feature extractor. Route outputs
//! are fused into a six-class prediction.
//!
//! Everything is built on the in-crate [`tensor`] engine: dense f64 tensors
//! with reverse-mode differentiation over a per-forward recorded graph, plus
//! a finite-difference checker used throughout the test suite.

pub mod ablation;
pub mod capsule;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod gru;
pub mod lexicon;
pub mod metrics;
pub mod model;
pub mod sentiment_branch;
pub mod exec;
pub mod tensor;

pub use error::{Result, ScclError};
