//! Core algorithms for temporal action localization with a split-head GRU.
//!
//! The crate is `no_std` (it needs `alloc`) and holds no IO. It covers:
//!
//! - [`dataset`]: video records, synthetic corpus generation, per-unit targets
//!   and training windows.
//! - [`network`]: the stacked GRU probability predictor with three separated
//!   output heads, its weighted cross-entropy loss and hand-written
//!   backpropagation through time.
//! - [`optim`]: Adam and the parameter-visiting trait shared by all models.
//! - [`proposal`]: candidate boundary detection, pairing and the two
//!   unit-to-time transforms (unit middle and interpolated keyframe).
//! - [`ranking`]: proposal features, the pointwise and listwise rankers,
//!   final scores and NMS.
//! - [`metrics`]: temporal IoU, AR@AN, recall at fixed budget and mAP.
//!
//! File formats, checkpoints and the command line live in the `tal` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod dataset;
pub mod linalg;
pub mod math;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod proposal;
pub mod ranking;

/// Random generator used everywhere a seed fixes behaviour.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's deterministic generator from a seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
