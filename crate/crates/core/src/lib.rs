//! Hybrid next-token / first-order meta-learning pretraining for small
//! decoder language models, with spectral learning-dynamics diagnostics and
//! a downstream sequence-labelling harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod finetune;
pub mod model;
pub mod numcore;
pub mod ranksim;
pub mod rng;
pub mod smlmt;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};

/// Vocabulary index of a token.
pub type TokenId = u32;
