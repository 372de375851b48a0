//! Cluster a pre-trained network's features with k-means, retrain a fresh
//! network on the cluster ids, and measure transfer with linear probes.
//!
//! The crate is organized bottom-up:
//!
//! - [`featurestore`]: feature/label types and the `CFF1`/`CFL1` file formats
//! - [`kmeans`]: two-stage Lloyd's k-means with deterministic parallel passes
//! - [`relabel`]: pseudo-label strategies and synthetic label noise
//! - [`nnet`]: a small MLP trained by momentum SGD (cross-entropy,
//!   distillation, multi-head)
//! - [`probe`]: linear classifiers on frozen features
//! - [`harness`]: synthetic data, the end-to-end pipeline, baselines, sweeps
//!
//! See `examples/` for one runnable program per capability.

pub mod error;
pub mod featurestore;
pub mod harness;
pub mod kmeans;
pub mod nnet;
pub mod probe;
pub mod relabel;

pub use error::{Error, Result};
