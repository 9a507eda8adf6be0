//! Network architecture: blocks, configuration, assembly and parameters.

pub mod config;
pub mod fmab;
mod layers;
pub mod model;
pub mod mrb;
pub mod params;

pub use config::{make_ablation, AblationId, BlockKind, NetworkConfig};
pub use fmab::{FmabConfig, FmabModule};
pub use model::{LmbfNet, Mode};
pub use mrb::{MrbConfig, MrbModule};
pub use params::{ParamCount, ParamId, ParamKind, ParamStore};
