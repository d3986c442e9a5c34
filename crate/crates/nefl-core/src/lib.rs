//! Core library for a nested federated learning simulator.
//!
//! A single global residual classifier is scaled into a family of nested
//! submodels (width-sliced and/or depth-masked, each residual block weighted
//! by a learnable step size). Heterogeneous simulated clients train whichever
//! submodel they can afford; the server merges the uploads with nested
//! averaging for the shared parameters and per-submodel averaging for the
//! submodel-specific ones (step sizes and batch-norm state).
//!
//! Modules, bottom-up:
//! - [`tensor`] / [`tape`]: dense `f64` tensors and reverse-mode autodiff
//! - [`data`]: synthetic blobs, IDX and CIFAR-binary loaders, client partitions
//! - [`model`]: the residual classifier and its parameter store
//! - [`scaling`]: submodel derivation, slicing, and coordinate bookkeeping
//! - [`aggregate`]: nested averaging plus a brute-force oracle
//! - [`federation`]: rounds, client sampling, local SGD
//! - [`config`] / [`report`]: experiment configs, metrics, CSV/JSON output

pub mod aggregate;
pub mod config;
pub mod data;
pub mod error;
pub mod federation;
pub mod model;
pub mod report;
pub mod rng;
pub mod scaling;
pub mod tape;
pub mod tensor;

pub use error::{NeflError, Result};
