//! Feature extractors, one-shot classifiers and prototype-conditioned
//! generators built on libtorch.

// Range checks are written as negations so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod backbone;
pub mod checkpoint;
pub mod classify;
pub mod compare;
pub mod dagan;
pub mod embed;
pub mod error;
pub mod generator;
pub mod layers;
pub mod maml;
pub mod protonet;
pub mod recognizability;
pub mod simclr;
pub mod stn;
pub mod tensor;
pub mod train;
pub mod vae_ns;
pub mod vae_stn;

pub use error::{Error, Result};
