//! Image ingestion, resizing, tiling, selection, augmentation and synthetic
//! data.

pub mod dataset;
pub mod netpbm;
pub mod resize;
pub mod synth;
pub mod tile;

pub use dataset::{find_plan, manifest_csv, prepare, read_split, write_split, PatchPlan, PATCH_PLANS};
pub use resize::{resize, ResizeMode};
pub use synth::synth_fundus;
pub use tile::{
    augment, count_foreground, full_frame, select, stitch, tile, tile_grid, tile_tensor, DatasetTag, FeatureTag,
    ImageRecord, PatchRecord, Transform,
};
