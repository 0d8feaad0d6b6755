//! Inverse-variance weighted training for regression with heteroscedastic label noise.
//!
//! The crate provides the full experimental stack: noise-variance distributions and
//! label corruption, batch loss functions (L2, IV, BIV, cutoff), a from-scratch ReLU
//! MLP with manual backpropagation, SGD/Adam, a closed-form weighted least squares
//! oracle, dataset pipelines (UCI Bike Sharing hourly, synthetic regression), and a
//! seeded experiment harness with multi-seed aggregation.

pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod linear;
pub mod losses;
pub mod nn;
pub mod noise;
pub mod optim;
pub mod rng;

pub use error::{BivError, Result};
