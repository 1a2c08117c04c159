//! Metric learning with a guided pairwise KL-divergence objective, a small
//! trainable feedforward network, and a biometric evaluation suite
//! (classification, closed-set, open-set, verification, clusterability).
//!
//! All numeric code is generic over the scalar type via [`scalar::Real`]
//! (`f32` or `f64`); the aliases at the crate root pin `f64`, which the
//! documented tolerances assume.

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod pairing;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// Probability distribution over identities, 64-bit.
pub type ProbDist64 = numerics::ProbDist<f64>;
/// Loss value plus per-sample logit gradients, 64-bit.
pub type LossOutput64 = losses::LossOutput<f64>;
/// Labeled feature-vector dataset, 64-bit.
pub type Dataset64 = data::Dataset<f64>;
/// Feedforward network, 64-bit.
pub type Network64 = model::Network<f64>;
/// Unit-norm embeddings with identity labels, 64-bit.
pub type EmbeddingSet64 = eval::EmbeddingSet<f64>;
/// Aggregated protocol results, 64-bit.
pub type EvalReport64 = eval::EvalReport<f64>;
