//! Discovery of conserved quantities from noisy trajectory data.
//!
//! The pipeline has three stages:
//!
//! 1. [`neural`] fits a multilayer-perceptron vector field to observed
//!    trajectories by differentiating through a fixed-step RK4 rollout.
//! 2. [`generator`] searches a small expression grammar with an autoregressive
//!    token policy, pre-trained by maximum likelihood and fine-tuned with a
//!    clipped policy-gradient objective against the learned field.
//! 3. [`verifier`] certifies candidates by bounding `|grad C . f|` over a dense
//!    sample of the data region, and measures drift along true trajectories.
//!
//! [`catalog`] holds the benchmark systems and dataset generation, and
//! [`experiments`] runs repeated trials and aggregates discovery rates.

// `!(x > 0.0)` is used on purpose so that NaN is rejected along with the bound
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod experiments;
pub mod generator;
pub mod integrators;
pub mod neural;
mod optim;
pub mod seeds;
pub mod spatial;
pub mod symbolic;
pub mod verifier;

pub use catalog::{Dataset, SystemSpec, Trajectory};
pub use integrators::{IntegratorConfig, VectorField};
pub use neural::MlpField;
pub use symbolic::Expr;
