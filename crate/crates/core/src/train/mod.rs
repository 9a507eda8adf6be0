//! Optimisation, the training loop and evaluation.

pub mod adam;
pub mod eval;
pub mod fit;

pub use adam::AdamState;
pub use eval::{evaluate, predict_image, AucMode, EvalConfig, EvalReport, ImageEval, Segmenter};
pub use fit::{train, EpochRecord, History, Task, TrainConfig, Validation};
