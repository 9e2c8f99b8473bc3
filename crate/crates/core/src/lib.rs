//! Self-verification and self-rectification training pipeline on a toy
//! policy whose probabilities, gradients and outcomes are exactly computable.

pub mod data;
pub mod dpo;
pub mod env;
pub mod jsonl;
pub mod metrics;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod trajectory;
pub mod workflow;
