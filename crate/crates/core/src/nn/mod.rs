//! Minimal CNN engine with explicit backward passes.
//!
//! Tensors are row-major with a leading batch axis (`N×C×H×W` for images,
//! `N×F` after flattening). Everything is generic over [`Scalar`] so the same
//! kernels train in `f32` and are gradient-checked in `f64`.

mod adam;
pub mod conv;
pub mod gradcheck;
mod layer;
pub mod ops;
mod tensor;

pub use adam::Adam;
pub use conv::{ConvGeometry, Padding};
pub use gradcheck::{grad_check, layer_suite, GradCheckOptions, GradCheckReport, SuiteRow};
pub use layer::{param_count, stack_output_shape, BatchLoss, Layer, LayerConfig, Mode, Network};
pub use tensor::{Param, Scalar, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, NnError>;
