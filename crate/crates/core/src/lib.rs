//! Repetitive sample drop-out training for imbalanced score classification,
//! plus conv1 feature-map-difference highlight extraction.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod highlight;
mod fsutil;
pub mod mask;
pub mod nn;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use mask::BinaryMask;
pub use tensor::Tensor;
