//! Neighborhood-overlap-aware high-order graph neural network for link
//! prediction on dynamic graphs.
//!
//! The pipeline runs bottom-up through these modules:
//!
//! - [`tensor`]: third-order tensor algebra and the transform-domain product.
//! - [`autodiff`]: a reverse-mode tape over the fixed primitive set the
//!   model needs, plus a finite-difference checker.
//! - [`graph`]: edge-list ingestion, snapshot binning, edge splits and
//!   negative sampling.
//! - [`structfeat`]: the multi-hop overlap tensor and the learned
//!   structural feature generator.
//! - [`noa`]: overlap scores and their row-wise normalization into the
//!   aggregation tensor.
//! - [`model`]: stacked high-order layers and the link decoder.
//! - [`train`]: loss, Adam, metrics and the early-stopped training loop.
//! - [`checkpoint`] and [`config`]: on-disk formats.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
mod error;
pub mod graph;
pub mod model;
pub mod noa;
pub mod pipeline;
pub mod structfeat;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
