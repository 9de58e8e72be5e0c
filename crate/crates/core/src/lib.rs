//! Goal-conditioned reinforcement learning over the latent space of a
//! generative model.
//!
//! An agent walks a latent vector through a locally linear, typical-set
//! constrained MDP, earning reward for visiting new attribute buckets while
//! keeping identity features close to the starting point. The crate ships the
//! environment, analytic and remote semantic oracles, a small MLP policy with
//! exact gradients, PPO and A2C trainers, linear-traversal baselines, and an
//! evaluation harness.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algo;
pub mod baselines;
pub mod calibrate;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod run;
pub mod trajectory;

pub use error::{Error, Result, TransportError};
