//! Dense f64 tensor numerics with reverse-mode differentiation over a fixed
//! operator set, a counter-based RNG, and a finite-difference gradient checker.

pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod rng;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use params::{ParamId, ParamStore};
pub use rng::RngState;
pub use tensor::Tensor;

/// Errors from tensor and graph operations.
#[derive(Debug, thiserror::Error)]
pub enum MathError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("degenerate dimension in {op}: {detail}")]
    DegenerateDim { op: &'static str, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, MathError>;
