//! Noise-robust classification lab built around logit-level clipping.
//!
//! The crate provides, in dependency order:
//!
//! - [`numerics`]: seeded splittable randomness and stable softmax /
//!   log-sum-exp primitives;
//! - [`transforms`]: the logit transforms (clip-by-norm, clip-by-value,
//!   logit normalization, identity) with Jacobian-vector products;
//! - [`losses`]: the composite-loss zoo with analytic gradients through
//!   transform and softmax;
//! - [`bounds`]: closed-form loss bounds, risk-gap constants, and the
//!   noisy-risk decomposition identity;
//! - [`noise`]: transition-matrix and instance-dependent label
//!   corruption plus empirical noise measurement;
//! - [`model`]: a small MLP with explicit backprop and ReLU/ReLU6;
//! - [`train`]: SGD with momentum, schedules, gradient clipping, and
//!   the τ-selection sweep;
//! - [`data`], [`config`], [`experiment`]: synthetic datasets, the JSON
//!   config schema, and reproducible experiment runs.

pub mod bounds;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod noise;
pub mod numerics;
pub mod train;
pub mod transforms;

pub use error::{Error, Result};
