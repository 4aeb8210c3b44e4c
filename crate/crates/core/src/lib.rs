//! Core library for `aliasim`: deterministic 2D manipulation environments with
//! controlled observation aliasing, a history-conditioned action-chunk policy
//! trained by conditional flow matching, and the metrics used to evaluate
//! inter-chunk consistency and aliasing severity.
//!
//! The crate is organized around the pipeline the CLI drives:
//! generate demonstrations ([`env`], [`data`]), train a policy variant
//! ([`model`], [`flow`], [`train`]), and evaluate it ([`metrics`], [`policy`]).

pub mod data;
pub mod env;
pub mod flow;
pub mod math;
pub mod metrics;
pub mod model;
pub mod policy;
pub mod train;

pub use math::rng::RngState;
pub use math::tensor::Tensor;
