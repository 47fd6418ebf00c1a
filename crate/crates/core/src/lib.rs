//! Decision-boundary model fingerprinting.
//!
//! This crate trains small dense classifiers, derives adversarial-example
//! fingerprints placed at an analytically bounded distance beyond the
//! protected model's decision boundary, and verifies suspect-model
//! ownership from black-box predictions alone.
//!
//! The pieces, bottom to top:
//!
//! - [`nn`]: the feedforward engine (logits, margins, analytic gradients,
//!   SGD training)
//! - [`datagen`]: deterministic synthetic datasets and CSV ingestion
//! - [`modelops`]: performance-preserving modifications (fine-tuning,
//!   pruning, distillation, ...) and surrogate/test pool construction
//! - [`fingerprint`]: anchor selection, minimal boundary-crossing
//!   perturbations, and the stretch-factor search inside the admissible
//!   interval derived from surrogate-pool statistics
//! - [`verify`]: matching rates, threshold decisions, ROC/AUC
//! - [`persist`]: versioned JSON artifacts
//!
//! All randomness flows through [`rng::Rng`], a frozen xorshift64* stream,
//! so identical seeds reproduce identical artifacts byte for byte.

pub mod datagen;
pub mod error;
pub mod fingerprint;
pub mod modelops;
pub mod nn;
pub mod persist;
pub mod rng;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
