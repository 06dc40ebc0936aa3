//! Inference-time reward alignment for diffusion samplers on analytic
//! Gaussian-mixture priors.
//!
//! The priors make every quantity exact: marginal scores, Tweedie posterior
//! means, and (for a single Gaussian with a linear reward) the
//! reward-tilted target distribution. On top of that sit the guided
//! samplers: best-of-N, blockwise selection, gradient guidance, and the
//! unified sampler that interleaves blockwise gradients with blockwise
//! selection.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod error;
pub mod guidance;
pub mod harness;
pub mod metrics;
pub mod nfe;
pub mod rewards;
pub mod rng;
pub mod selftest;
pub mod vector;

pub use error::{Error, Result};
pub use nfe::{NfeCounters, NfeTally};
pub use rng::Substreams;
