//! Selective state-space message passing on combinatorial complexes.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for callers that do not care.

pub mod ccwl;
pub mod cli;
pub mod complex;
pub mod error;
pub mod layer;
pub mod lifting;
pub mod model;
pub mod scalar;
pub mod ssm;
pub mod tensor;
pub mod trainer;

pub use complex::{Cell, CombinatorialComplex};
pub use error::{Error, Result};
pub use lifting::{lift, Graph, LiftMode};
pub use model::{CcMamba, ModelConfig};
pub use scalar::Scalar;
pub use trainer::{train, LabeledDataset, TrainConfig};

/// Default working precision.
pub type Real = f64;
pub type Model = CcMamba<f64>;
pub type Model32 = CcMamba<f32>;
pub type Dataset = LabeledDataset<f64>;
pub type Dataset32 = LabeledDataset<f32>;
pub type Tensor = tensor::Tensor<f64>;
