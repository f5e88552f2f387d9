//! Adaptive label refinement (ALR) for training classifiers on noisy labels.
//!
//! The crate is `no_std` and only needs `alloc`. It contains the pure
//! algorithmic parts: losses and their logit gradients, a small MLP with
//! hand-written backpropagation, SGD with momentum, the temporal-ensembling
//! soft-label store, synthetic data with label-noise injection, and the
//! two-phase training loop. File formats and the command-line front end live
//! in the `alr` crate.
#![no_std]
#![warn(rust_2018_idioms, unused_qualifications, missing_debug_implementations)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod labels;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use labels::SoftLabelStore;
pub use model::MlpParams;
pub use numerics::{LogitVector, ProbVector};
pub use trainer::{EpochMetrics, Method, TrainConfig};
