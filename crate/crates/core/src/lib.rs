//! Continual instruction tuning with spectral-aware consolidation and
//! inquiry regularization, on a from-scratch tiny transformer.

pub mod checkpoint;
pub mod consolidation;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod params;
pub mod regularizers;
pub mod tasks;

pub use error::{Error, Result};
pub use params::{ParamSet, Scalar, Tensor};
