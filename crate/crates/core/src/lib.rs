//! Core building blocks for evaluating one-shot generative models on
//! handwritten-character data.
//!
//! The crate is split along the evaluation pipeline:
//!
//! - [`bitmap`] and [`data`]: image containers, Omniglot ingestion, weak
//!   splits, episodes and context batches.
//! - [`metrics`]: prototype selection, diversity measures, model points,
//!   distance-to-human and correlation statistics.
//! - [`analysis`]: Savitzky-Golay smoothing, order-preserving parametric
//!   curve fitting, trend reports and hyper-parameter sweep orchestration.
//!
//! Everything here is free of any neural-network runtime so it can be used
//! (and tested) on precomputed embeddings and metric tables.

// Range checks are written as negations so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bitmap;
pub mod data;
pub mod error;
pub mod metrics;
pub mod seed;

pub use bitmap::{Bitmap, SIDE};
pub use error::{Error, Result};
