//! Knowledge distillation and explainability for small image classifiers.

pub mod autodiff;
pub mod data;
pub mod distill;
mod error;
pub mod evaluate;
pub mod explain;
pub mod gradcheck;
pub mod models;
pub mod resample;
pub mod rng;
mod tensor;

pub use error::{Error, ParseError, Result};
pub use tensor::Tensor;
