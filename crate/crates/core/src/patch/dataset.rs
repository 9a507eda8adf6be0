//! Dataset directories, patch manifests and the per-dataset patch plans.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::netpbm;
use super::resize::{resize, ResizeMode};
use super::tile::{full_frame, select, tile, tile_grid, DatasetTag, FeatureTag, ImageRecord, PatchRecord};
use crate::error::{Error, Result};

/// How one dataset/feature pair is turned into training patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchPlan {
    pub dataset: DatasetTag,
    pub feature: FeatureTag,
    pub train_images: usize,
    /// `(H, W)` after resizing.
    pub resized: (usize, usize),
    /// `None` trains on the full frame.
    pub patch: Option<usize>,
}

impl PatchPlan {
    pub fn patches_per_image(&self) -> Result<usize> {
        match self.patch {
            Some(p) => Ok(tile_grid(self.resized.0, self.resized.1, p)?.len()),
            None => Ok(1),
        }
    }

    pub fn total_patches(&self) -> Result<usize> {
        Ok(self.patches_per_image()? * self.train_images)
    }
}

/// Resize targets, patch sizes and training image counts of the public
/// retinal datasets. CHASE uses 1024×1024 so that 128 tiles it exactly.
pub const PATCH_PLANS: [PatchPlan; 9] = {
    const fn plan(
        dataset: DatasetTag,
        feature: FeatureTag,
        train_images: usize,
        resized: (usize, usize),
        patch: Option<usize>,
    ) -> PatchPlan {
        PatchPlan {
            dataset,
            feature,
            train_images,
            resized,
            patch,
        }
    }
    use DatasetTag::*;
    use FeatureTag::*;
    [
        plan(Drive, Vessels, 20, (640, 640), Some(128)),
        plan(Stare, Vessels, 10, (640, 640), Some(128)),
        plan(Chase, Vessels, 20, (1024, 1024), Some(128)),
        plan(Hrf, Vessels, 23, (3456, 2304), Some(128)),
        plan(Idrid, HardExudates, 54, (2816, 4096), Some(256)),
        plan(Idrid, SoftExudates, 26, (2816, 4096), Some(256)),
        plan(Idrid, Microaneurysms, 54, (2816, 4096), Some(256)),
        plan(Idrid, Haemorrhages, 53, (2816, 4096), Some(256)),
        plan(Idrid, OpticDisc, 54, (2816, 4096), None),
    ]
};

pub fn find_plan(dataset: DatasetTag, feature: FeatureTag) -> Option<PatchPlan> {
    PATCH_PLANS
        .into_iter()
        .find(|p| p.dataset == dataset && p.feature == feature)
}

/// Resize (bilinear image, nearest mask), tile and select one record.
/// Returns every patch in grid order with `kept` set.
pub fn prepare(
    record: &ImageRecord,
    resized: (usize, usize),
    patch: Option<usize>,
    min_fg: usize,
) -> Result<Vec<PatchRecord>> {
    let (h, w) = resized;
    let sized = ImageRecord {
        image: resize(&record.image, h, w, ResizeMode::Bilinear)?,
        mask: resize(&record.mask, h, w, ResizeMode::Nearest)?,
        ..record.clone()
    };
    let patches = match patch {
        Some(p) => tile(&sized, p)?,
        None => vec![full_frame(&sized)],
    };
    let (mut kept, discarded) = select(patches, record.feature, min_fg);
    kept.extend(discarded);
    kept.sort_by_key(|p| (p.grid_row, p.grid_col));
    Ok(kept)
}

pub fn manifest_csv(patches: &[PatchRecord]) -> String {
    let mut out = String::from("source_id,grid_row,grid_col,fg_pixels,kept\n");
    for p in patches {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.source_id, p.grid_row, p.grid_col, p.fg_pixels, p.kept
        );
    }
    out
}

fn split_dirs(root: &Path, split: &str) -> (PathBuf, PathBuf) {
    let base = root.join(split);
    (base.join("images"), base.join("masks"))
}

/// Write records as `<root>/<split>/images/<id>.ppm` and
/// `<root>/<split>/masks/<id>.pgm`.
pub fn write_split(root: &Path, split: &str, records: &[ImageRecord]) -> Result<()> {
    let (images, masks) = split_dirs(root, split);
    for dir in [&images, &masks] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for r in records {
        netpbm::save(&images.join(format!("{}.ppm", r.id)), &r.image)?;
        netpbm::save(&masks.join(format!("{}.pgm", r.id)), &r.mask)?;
    }
    Ok(())
}

/// Load every `images/*.ppm` of a split with its same-named mask, sorted
/// by name. Mask grey values above one half count as foreground.
pub fn read_split(root: &Path, split: &str, dataset: DatasetTag, feature: FeatureTag) -> Result<Vec<ImageRecord>> {
    let (images, masks) = split_dirs(root, split);
    let listing = fs::read_dir(&images).map_err(|e| Error::io(&images, e))?;
    let mut names: Vec<String> = listing
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter_map(|n| n.strip_suffix(".ppm").map(str::to_string))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|id| {
            let image = netpbm::load(&images.join(format!("{id}.ppm")))?;
            let mask_path = masks.join(format!("{id}.pgm"));
            if !mask_path.exists() {
                return Err(Error::Contract(format!("missing mask {}", mask_path.display())));
            }
            let mask = netpbm::load(&mask_path)?.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
            ImageRecord::new(id, image, mask, dataset, feature)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::synth::synth_fundus;

    #[test]
    fn plan_totals() {
        let totals: Vec<usize> = PATCH_PLANS.iter().map(|p| p.total_patches().unwrap()).collect();
        assert_eq!(totals, [500, 250, 1280, 11_178, 9_504, 4_576, 9_504, 9_328, 54]);
    }

    #[test]
    fn prepare_keeps_grid_order() {
        let r = synth_fundus(1, 64, FeatureTag::Microaneurysms).unwrap();
        let p = prepare(&r, (64, 64), Some(16), 1).unwrap();
        assert_eq!(p.len(), 16);
        assert!(p.windows(2).all(|w| (w[0].grid_row, w[0].grid_col) < (w[1].grid_row, w[1].grid_col)));
        assert!(p.iter().all(|q| q.kept == (q.fg_pixels >= 1)));
        assert!(manifest_csv(&p).starts_with("source_id,grid_row,grid_col,fg_pixels,kept\nsynth_000001,0,0,"));
    }

    #[test]
    fn split_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<_> = (0..2).map(|s| synth_fundus(s, 32, FeatureTag::Vessels).unwrap()).collect();
        write_split(dir.path(), "train", &recs).unwrap();
        let back = read_split(dir.path(), "train", DatasetTag::Synth, FeatureTag::Vessels).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.mask, b.mask);
            assert_eq!(a.id, b.id);
            let q = netpbm::decode(&netpbm::encode(&a.image).unwrap()).unwrap();
            assert_eq!(q, b.image);
        }
        fs::remove_file(dir.path().join("train/masks/synth_000001.pgm")).unwrap();
        assert!(matches!(
            read_split(dir.path(), "train", DatasetTag::Synth, FeatureTag::Vessels),
            Err(Error::Contract(_))
        ));
    }
}
