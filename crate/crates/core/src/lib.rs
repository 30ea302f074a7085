//! Core kernels for discovering and validating the preference axes behind
//! LLM-as-a-judge decisions.
//!
//! Everything in this crate is pure computation: paired preference data,
//! deterministic numerics (PCA, logistic regression, resampling statistics),
//! a sparse-autoencoder and concept-bottleneck trainer, the five feature
//! extraction methods, and the evaluation metrics built on top of them.
//! All randomness flows from explicit seeds through [`rng::CounterRng`];
//! given the same inputs and seeds, every function here is bit-reproducible.
//!
//! The crate is `no_std` (with `alloc`). File formats, network clients and
//! pipeline orchestration live in the companion `judgelens-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bottleneck;
pub mod container;
pub mod corpus;
pub mod features;
pub mod interpret;
pub mod mat;
pub mod metrics;
pub mod numerics;
pub mod rng;
pub mod sae;

pub use mat::Mat;
pub use rng::CounterRng;
