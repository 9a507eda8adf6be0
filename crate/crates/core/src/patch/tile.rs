//! Records, non-overlapping tiling, selection and augmentation.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DatasetTag {
    Drive,
    Stare,
    Chase,
    Hrf,
    Idrid,
    Synth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureTag {
    Vessels,
    HardExudates,
    SoftExudates,
    Microaneurysms,
    Haemorrhages,
    OpticDisc,
}

impl FeatureTag {
    pub const ALL: [FeatureTag; 6] = [
        FeatureTag::Vessels,
        FeatureTag::HardExudates,
        FeatureTag::SoftExudates,
        FeatureTag::Microaneurysms,
        FeatureTag::Haemorrhages,
        FeatureTag::OpticDisc,
    ];

    pub fn is_lesion(self) -> bool {
        !matches!(self, FeatureTag::Vessels | FeatureTag::OpticDisc)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureTag::Vessels => "vessels",
            FeatureTag::HardExudates => "hard_exudates",
            FeatureTag::SoftExudates => "soft_exudates",
            FeatureTag::Microaneurysms => "microaneurysms",
            FeatureTag::Haemorrhages => "haemorrhages",
            FeatureTag::OpticDisc => "optic_disc",
        }
    }
}

impl fmt::Display for FeatureTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature {s:?}")))
    }
}

impl DatasetTag {
    pub const ALL: [DatasetTag; 6] = [
        DatasetTag::Drive,
        DatasetTag::Stare,
        DatasetTag::Chase,
        DatasetTag::Hrf,
        DatasetTag::Idrid,
        DatasetTag::Synth,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetTag::Drive => "DRIVE",
            DatasetTag::Stare => "STARE",
            DatasetTag::Chase => "CHASE",
            DatasetTag::Hrf => "HRF",
            DatasetTag::Idrid => "IDRID",
            DatasetTag::Synth => "SYNTH",
        }
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown dataset {s:?}")))
    }
}

/// A full image `[3, H, W]` in [0, 1] with its binary mask `[1, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
    pub dataset: DatasetTag,
    pub feature: FeatureTag,
}

impl ImageRecord {
    pub fn new(
        id: impl Into<String>,
        image: Tensor<f32>,
        mask: Tensor<f32>,
        dataset: DatasetTag,
        feature: FeatureTag,
    ) -> Result<Self> {
        let (&[3, h, w], &[1, mh, mw]) = (image.shape(), mask.shape()) else {
            return Err(Error::mismatch("image record", image.shape(), mask.shape()));
        };
        if (h, w) != (mh, mw) {
            return Err(Error::mismatch("image record", image.shape(), mask.shape()));
        }
        if !mask.data().iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::Contract("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            id: id.into(),
            image,
            mask,
            dataset,
            feature,
        })
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchRecord {
    pub source_id: String,
    pub grid_row: usize,
    pub grid_col: usize,
    pub image_patch: Tensor<f32>,
    pub mask_patch: Tensor<f32>,
    pub kept: bool,
    pub fg_pixels: usize,
}

pub fn count_foreground(mask: &Tensor<f32>) -> usize {
    mask.data().iter().filter(|&&v| v != 0.0).count()
}

/// Row-major `(row, col)` grid of `patch`-sized tiles over `h × w`.
pub fn tile_grid(h: usize, w: usize, patch: usize) -> Result<Vec<(usize, usize)>> {
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::shape(
            &[h, w],
            format!("extents not divisible by patch size {patch}"),
        ));
    }
    let cols = w / patch;
    Ok((0..h / patch * cols).map(|i| (i / cols, i % cols)).collect())
}

/// Cut a `[C, H, W]` tensor into row-major `[C, patch, patch]` tiles.
pub fn tile_tensor(t: &Tensor<f32>, patch: usize) -> Result<Vec<Tensor<f32>>> {
    let &[c, h, w] = t.shape() else {
        return Err(Error::shape(t.shape(), "tile needs [C, H, W]"));
    };
    let d = t.data();
    tile_grid(h, w, patch)?
        .into_iter()
        .map(|(r, col)| {
            let mut out = Vec::with_capacity(c * patch * patch);
            for ch in 0..c {
                for y in r * patch..(r + 1) * patch {
                    let s = (ch * h + y) * w + col * patch;
                    out.extend_from_slice(&d[s..s + patch]);
                }
            }
            Tensor::from_vec(&[c, patch, patch], out)
        })
        .collect()
}

/// Reassemble row-major tiles into a `[C, rows·p, cols·p]` tensor.
pub fn stitch(tiles: &[Tensor<f32>], rows: usize, cols: usize) -> Result<Tensor<f32>> {
    if tiles.len() != rows * cols || tiles.is_empty() {
        return Err(Error::Contract(format!(
            "{} tiles for a {rows}x{cols} grid",
            tiles.len()
        )));
    }
    let &[c, ph, pw] = tiles[0].shape() else {
        return Err(Error::shape(tiles[0].shape(), "tiles must be [C, p, p]"));
    };
    let (h, w) = (rows * ph, cols * pw);
    let mut out = vec![0.0f32; c * h * w];
    for (i, t) in tiles.iter().enumerate() {
        if t.shape() != tiles[0].shape() {
            return Err(Error::mismatch("stitch", tiles[0].shape(), t.shape()));
        }
        let (r, col) = (i / cols, i % cols);
        for ch in 0..c {
            for y in 0..ph {
                let dst = (ch * h + r * ph + y) * w + col * pw;
                let src = (ch * ph + y) * pw;
                out[dst..dst + pw].copy_from_slice(&t.data()[src..src + pw]);
            }
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

/// Non-overlapping patches of a record in row-major grid order, all
/// initially kept.
pub fn tile(record: &ImageRecord, patch: usize) -> Result<Vec<PatchRecord>> {
    let grid = tile_grid(record.height(), record.width(), patch)?;
    let images = tile_tensor(&record.image, patch)?;
    let masks = tile_tensor(&record.mask, patch)?;
    Ok(grid
        .into_iter()
        .zip(images.into_iter().zip(masks))
        .map(|((grid_row, grid_col), (image_patch, mask_patch))| PatchRecord {
            source_id: record.id.clone(),
            grid_row,
            grid_col,
            fg_pixels: count_foreground(&mask_patch),
            image_patch,
            mask_patch,
            kept: true,
        })
        .collect())
}

/// The whole image as one patch at grid position (0, 0).
pub fn full_frame(record: &ImageRecord) -> PatchRecord {
    PatchRecord {
        source_id: record.id.clone(),
        grid_row: 0,
        grid_col: 0,
        image_patch: record.image.clone(),
        mask_patch: record.mask.clone(),
        kept: true,
        fg_pixels: count_foreground(&record.mask),
    }
}

/// Lesion patches are kept iff they hold at least `min_fg` foreground
/// pixels; vessel and optic-disc patches are all kept. Sets `kept` and
/// partitions the input, preserving order.
pub fn select(
    patches: Vec<PatchRecord>,
    feature: FeatureTag,
    min_fg: usize,
) -> (Vec<PatchRecord>, Vec<PatchRecord>) {
    patches
        .into_iter()
        .map(|mut p| {
            p.kept = !feature.is_lesion() || p.fg_pixels >= min_fg;
            p
        })
        .partition(|p| p.kept)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transform {
    Identity,
    FlipHorizontal,
    FlipVertical,
    Rotate90,
    Rotate180,
    Rotate270,
}

impl Transform {
    pub const ALL: [Transform; 6] = [
        Transform::Identity,
        Transform::FlipHorizontal,
        Transform::FlipVertical,
        Transform::Rotate90,
        Transform::Rotate180,
        Transform::Rotate270,
    ];

    /// Apply to a square `[C, S, S]` tensor. Rotations are counter-clockwise.
    pub fn apply(self, t: &Tensor<f32>) -> Result<Tensor<f32>> {
        let &[c, h, w] = t.shape() else {
            return Err(Error::shape(t.shape(), "transform needs [C, H, W]"));
        };
        if h != w && matches!(self, Transform::Rotate90 | Transform::Rotate270) {
            return Err(Error::shape(t.shape(), "quarter rotation needs a square patch"));
        }
        let n = h;
        let src = |y: usize, x: usize| -> (usize, usize) {
            match self {
                Transform::Identity => (y, x),
                Transform::FlipHorizontal => (y, w - 1 - x),
                Transform::FlipVertical => (h - 1 - y, x),
                Transform::Rotate90 => (x, n - 1 - y),
                Transform::Rotate180 => (h - 1 - y, w - 1 - x),
                Transform::Rotate270 => (n - 1 - x, y),
            }
        };
        let d = t.data();
        let mut out = Vec::with_capacity(d.len());
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let (sy, sx) = src(y, x);
                    out.push(d[(ch * h + sy) * w + sx]);
                }
            }
        }
        Tensor::from_vec(t.shape(), out)
    }
}

/// The original patch and its five flip/rotation variants, in
/// [`Transform::ALL`] order, with one transform applied to image and mask.
pub fn augment(patch: &PatchRecord) -> Result<Vec<PatchRecord>> {
    Transform::ALL
        .iter()
        .map(|t| {
            Ok(PatchRecord {
                image_patch: t.apply(&patch.image_patch)?,
                mask_patch: t.apply(&patch.mask_patch)?,
                ..patch.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_vec(&[c, h, w], (0..c * h * w).map(|i| i as f32).collect()).unwrap()
    }

    #[test]
    fn grid_counts() {
        assert_eq!(tile_grid(640, 640, 128).unwrap().len(), 25);
        assert_eq!(tile_grid(3456, 2304, 128).unwrap().len(), 486);
        assert_eq!(tile_grid(2816, 4096, 256).unwrap().len(), 176);
        assert_eq!(tile_grid(4, 6, 2).unwrap()[..4], [(0, 0), (0, 1), (0, 2), (1, 0)]);
        assert!(tile_grid(1025, 1024, 128).is_err());
    }

    #[test]
    fn stitch_inverts_tile() {
        let t = ramp(3, 8, 12);
        let tiles = tile_tensor(&t, 4).unwrap();
        assert_eq!(tiles[1].data()[0], 4.0);
        assert_eq!(stitch(&tiles, 2, 3).unwrap(), t);
    }

    #[test]
    fn rotations_compose() {
        let t = ramp(1, 3, 3);
        let r90 = Transform::Rotate90.apply(&t).unwrap();
        // counter-clockwise: the last column becomes the top row
        assert_eq!(&r90.data()[..3], &[2.0, 5.0, 8.0]);
        let r180 = Transform::Rotate90.apply(&r90).unwrap();
        assert_eq!(r180, Transform::Rotate180.apply(&t).unwrap());
        let r270 = Transform::Rotate90.apply(&r180).unwrap();
        assert_eq!(r270, Transform::Rotate270.apply(&t).unwrap());
        assert_eq!(Transform::Rotate90.apply(&r270).unwrap(), t);
        let h = Transform::FlipHorizontal.apply(&t).unwrap();
        assert_eq!(Transform::FlipHorizontal.apply(&h).unwrap(), t);
    }

    #[test]
    fn selection_rules() {
        let mk = |fg: usize| PatchRecord {
            source_id: "a".into(),
            grid_row: 0,
            grid_col: fg,
            image_patch: Tensor::zeros(&[3, 2, 2]).unwrap(),
            mask_patch: Tensor::zeros(&[1, 2, 2]).unwrap(),
            kept: true,
            fg_pixels: fg,
        };
        let (k, d) = select(vec![mk(0), mk(1), mk(3)], FeatureTag::HardExudates, 1);
        assert_eq!((k.len(), d.len()), (2, 1));
        assert!(!d[0].kept);
        let (k, d) = select(vec![mk(0), mk(0)], FeatureTag::Vessels, 1);
        assert_eq!((k.len(), d.len()), (2, 0));
    }

    #[test]
    fn record_validation() {
        let img = Tensor::zeros(&[3, 4, 4]).unwrap();
        assert!(ImageRecord::new("x", img.clone(), Tensor::zeros(&[1, 4, 5]).unwrap(), DatasetTag::Synth, FeatureTag::Vessels).is_err());
        assert!(ImageRecord::new("x", img, Tensor::full(&[1, 4, 4], 0.5).unwrap(), DatasetTag::Synth, FeatureTag::Vessels).is_err());
    }
}
