//! Long-tailed class-incremental learning at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense matrices, a ReLU multilayer perceptron with analytic
//!   gradients, SGD with momentum and a finite-difference gradient checker.
//! - [`data`]: labeled datasets (seeded Gaussian clusters or CSV files) and the
//!   class-balanced test split.
//! - [`scenario`]: long-tailed class profiles and ordered / shuffled /
//!   conventional task sequences.
//! - [`memory`]: the bounded exemplar store with herding or random selection.
//! - [`model`]: shared extractor, growing per-task heads, the learnable
//!   weight-scaling vector and nearest-class-mean inference.
//! - [`training`]: losses, samplers, the two training stages and the full
//!   incremental loop.
//! - [`metrics`]: per-task evaluation and run logs.
//! - [`harness`]: JSON configuration, multi-seed experiments, sweeps and the
//!   CSV / JSON outputs consumed by plotting scripts.

pub mod data;
pub mod error;
pub mod harness;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod scenario;
pub mod training;

pub use error::{Error, Result};
