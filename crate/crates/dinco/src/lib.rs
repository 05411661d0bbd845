//! Confidence estimation for language-model answers.
//!
//! Verbalized confidence is normalized against self-generated distractors
//! and combined with self-consistency. The crate covers the model gateway,
//! confidence elicitation, distractor generation, the coherence
//! computations, calibration metrics and an evaluation harness.

pub mod coherence;
pub mod distractors;
pub mod elicitation;
pub mod exec;
pub mod gateway;
pub mod harness;
pub mod metrics;
pub mod seed;
pub mod text;

pub use exec::Execution;
