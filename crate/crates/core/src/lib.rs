//! Federated unbiased learning-to-rank simulation core.
//!
//! Everything here is pure computation over in-memory data: dataset
//! preprocessing, linear rankers, ranking metrics, a position-based click
//! simulator with per-user bias, the IPS-weighted hinge objective, the
//! FedIPS / FedAvg round loop, a federated EM propensity estimator and a
//! LambdaRank-style full-information baseline. File formats, configuration
//! and the experiment harness live in the `fultr` crate.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
#![warn(missing_debug_implementations, rust_2018_idioms)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baseline;
pub mod clicksim;
pub mod dataset;
mod error;
pub mod federation;
pub mod metrics;
pub mod objective;
pub mod propensity;
pub mod ranker;
pub mod rng;

pub use error::{Error, Result};
