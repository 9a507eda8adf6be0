//! Network operations, each with a recorded backward rule.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod pool;
pub mod softmax;

pub use activation::gelu_scalar;
pub use batchnorm::{BatchNormConfig, BatchNormParams, BnMode};
pub use conv::{conv_param_count, ConvParams, ConvSpec};
