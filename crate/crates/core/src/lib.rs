//! Penalized maximum-likelihood estimation and model selection for finite
//! hidden Markov models whose emission densities are exponential-power
//! mixtures over a heavy-tailed dominating measure.
//!
//! The crate is organized around the estimation pipeline:
//!
//! * [`numerics`] — log-domain kernels shared by everything else,
//! * [`hmm`] — finite-state HMM containers, sampling and log-domain filtering,
//! * [`model`] — the constrained model family, its grid and the penalty,
//! * [`fit`] — constrained EM within one model,
//! * [`select`] — penalized selection over the `(K, M)` grid,
//! * [`truth`] — true-process generators (including misspecified ones),
//!   prediction-error estimation and forgetting/tail diagnostics,
//! * [`config`] / [`experiment`] — declarative experiment configs and the
//!   file-emitting drivers behind the CLI.

pub mod config;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod hmm;
pub mod model;
pub mod numerics;
pub mod seeds;
pub mod select;
pub mod truth;

pub use error::{Error, Result};
