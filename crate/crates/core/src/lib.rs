//! Minimum-power design for hybrid-NOMA downlinks in which every cluster pairs
//! a semantic user with a conventional bit user.
//!
//! The pipeline for one channel realization is: pick the symbol factor K,
//! translate the BLEU target into an SNR threshold, split bandwidth across
//! clusters, then compute beams and powers in closed form (or numerically
//! when the closed form violates the decoding-order constraint).

pub mod bandwidth;
pub mod beamforming;
pub mod benchmarks;
pub mod channel;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod oracle;
pub mod protocol;
pub mod semantic_model;

pub use error::{Error, Result};
