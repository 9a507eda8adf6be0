//! A small segmentation framework built around a lightweight multipath
//! encoder–decoder with focal-modulation attention and bidirectional skips.
//!
//! The crate carries its own dense tensors and reverse-mode autodiff
//! ([`graph`]), the network operations ([`nn`]), the architecture
//! ([`net`]), a patch-based image pipeline ([`patch`]), metrics
//! ([`metrics`]) and training/evaluation ([`train`]).

pub mod checkpoint;
pub mod checks;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kv;
pub mod metrics;
pub mod net;
pub mod nn;
pub mod patch;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use gradcheck::{gradcheck, GradcheckReport};
pub use graph::{Graph, NodeInfo, TensorId};
pub use tensor::{Element, Tensor};
