//! Structured variational inference for Dirichlet process deep latent
//! Gaussian mixture models (DP-DLGMM).
//!
//! The crate is organised bottom-up:
//!
//! * [`special`] scalar special functions and closed-form Gaussian / beta quantities,
//! * [`nn`] small feed-forward networks with explicit reverse-mode gradients,
//! * [`model`] the truncated stick-breaking generative process,
//! * [`engine`] the variational state, closed-form coordinate updates, the
//!   reparameterized gradient step, training, prediction and minibatch updates,
//! * [`data`] dataset ingestion and synthetic ground-truth mixtures,
//! * [`metrics`] clustering agreement scores used to evaluate runs.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`). The `*64`
//! aliases below name the double-precision instantiations used by the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod special;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type DiagGaussian64 = special::DiagGaussian<f64>;
pub type BetaParams64 = special::BetaParams<f64>;
pub type Mlp64 = nn::Mlp<f64>;
pub type GaussianHead64 = nn::GaussianHead<f64>;
pub type GenerativeParams64 = model::GenerativeParams<f64>;
pub type StickPosterior64 = engine::StickPosterior<f64>;
pub type Responsibilities64 = engine::Responsibilities<f64>;
pub type InferenceNets64 = engine::InferenceNets<f64>;
pub type VariationalState64 = engine::VariationalState<f64>;
pub type TrainConfig64 = engine::TrainConfig<f64>;
pub type Dataset64 = data::Dataset<f64>;
