//! Whole-image evaluation: tile, predict, stitch, threshold, score.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{auc, confusion, scalar_metrics, ConfusionCounts, ScalarMetrics};
use crate::net::LmbfNet;
use crate::patch::{stitch, tile_grid, tile_tensor, ImageRecord};
use crate::tensor::Tensor;

/// Anything that maps images `[B, 3, h, w]` to foreground probabilities
/// `[B, 1, h, w]`.
pub trait Segmenter: Sync {
    fn foreground(&self, images: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl Segmenter for LmbfNet<f32> {
    fn foreground(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let probs = self.predict(images)?;
        let [n, c, h, w] = probs.dims4()?;
        let plane = h * w;
        let mut out = Vec::with_capacity(n * plane);
        for b in 0..n {
            let s = (b * c + 1) * plane;
            out.extend_from_slice(&probs.data()[s..s + plane]);
        }
        Tensor::from_vec(&[n, 1, h, w], out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AucMode {
    /// One curve over every pixel of every image.
    Pooled,
    /// Mean of the per-image values that are defined.
    PerImageMean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Tile size; `None` predicts the full frame at once.
    pub patch: Option<usize>,
    pub threshold: f32,
    pub auc_mode: AucMode,
    /// Patches per forward call.
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            patch: None,
            threshold: 0.5,
            auc_mode: AucMode::Pooled,
            batch_size: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageEval {
    pub id: String,
    pub counts: ConfusionCounts,
    pub metrics: ScalarMetrics,
    /// `None` if the mask holds a single class.
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_image: Vec<ImageEval>,
    pub pooled: ConfusionCounts,
    pub metrics: ScalarMetrics,
    pub auc: Option<f64>,
}

/// Foreground probability map `[1, H, W]` of one `[3, H, W]` image.
pub fn predict_image(model: &dyn Segmenter, image: &Tensor<f32>, patch: Option<usize>, batch_size: usize) -> Result<Tensor<f32>> {
    let &[3, h, w] = image.shape() else {
        return Err(Error::shape(image.shape(), "expected a [3, H, W] image"));
    };
    let Some(p) = patch else {
        let out = model.foreground(&image.clone().reshape(&[1, 3, h, w])?)?;
        return out.reshape(&[1, h, w]);
    };
    let cols = tile_grid(h, w, p)?.len() / (h / p);
    let tiles = tile_tensor(image, p)?;
    let mut probs = Vec::with_capacity(tiles.len());
    for chunk in tiles.chunks(batch_size.max(1)) {
        let batch = Tensor::stack(&chunk.iter().collect::<Vec<_>>())?;
        let out = model.foreground(&batch)?;
        for tile in out.data().chunks_exact(p * p) {
            probs.push(Tensor::from_vec(&[1, p, p], tile.to_vec())?);
        }
    }
    stitch(&probs, h / p, cols)
}

fn score(record: &ImageRecord, probs: &Tensor<f32>, threshold: f32) -> Result<(ImageEval, Vec<f64>, Vec<bool>)> {
    let pred: Vec<f32> = probs.data().iter().map(|&p| (p >= threshold) as u8 as f32).collect();
    let counts = confusion(&pred, record.mask.data())?;
    let scores: Vec<f64> = probs.data().iter().map(|&p| p as f64).collect();
    let labels: Vec<bool> = record.mask.data().iter().map(|&m| m == 1.0).collect();
    let eval = ImageEval {
        id: record.id.clone(),
        counts,
        metrics: scalar_metrics(&counts),
        auc: auc(&scores, &labels).ok(),
    };
    Ok((eval, scores, labels))
}

/// Per-image and pooled metrics; images are processed in parallel and
/// reported in input order.
pub fn evaluate(model: &dyn Segmenter, records: &[ImageRecord], cfg: &EvalConfig) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::Contract("evaluate needs at least one record".into()));
    }
    let scored: Vec<_> = records
        .par_iter()
        .map(|r| {
            let probs = predict_image(model, &r.image, cfg.patch, cfg.batch_size)?;
            if probs.shape() != r.mask.shape() {
                return Err(Error::mismatch("evaluate", probs.shape(), r.mask.shape()));
            }
            score(r, &probs, cfg.threshold)
        })
        .collect::<Result<_>>()?;

    let pooled: ConfusionCounts = scored.iter().map(|(e, ..)| e.counts).sum();
    let auc = match cfg.auc_mode {
        AucMode::Pooled => {
            let scores: Vec<f64> = scored.iter().flat_map(|(_, s, _)| s.iter().copied()).collect();
            let labels: Vec<bool> = scored.iter().flat_map(|(.., l)| l.iter().copied()).collect();
            auc(&scores, &labels).ok()
        }
        AucMode::PerImageMean => {
            let defined: Vec<f64> = scored.iter().filter_map(|(e, ..)| e.auc).collect();
            (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
        }
    };
    Ok(EvalReport {
        per_image: scored.into_iter().map(|(e, ..)| e).collect(),
        metrics: scalar_metrics(&pooled),
        pooled,
        auc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::{synth_fundus, FeatureTag};

    /// Returns the first image channel, which the tests set to the mask.
    struct Oracle;

    impl Segmenter for Oracle {
        fn foreground(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
            let [n, _, h, w] = images.dims4()?;
            let plane = h * w;
            let mut out = Vec::new();
            for b in 0..n {
                out.extend_from_slice(&images.data()[b * 3 * plane..b * 3 * plane + plane]);
            }
            Tensor::from_vec(&[n, 1, h, w], out)
        }
    }

    fn oracle_records() -> Vec<ImageRecord> {
        (0..3)
            .map(|s| {
                let mut r = synth_fundus(s, 64, FeatureTag::Vessels).unwrap();
                r.image.data_mut()[..64 * 64].copy_from_slice(r.mask.data());
                r
            })
            .collect()
    }

    #[test]
    fn oracle_scores_perfectly() {
        let recs = oracle_records();
        for patch in [None, Some(16)] {
            let cfg = EvalConfig { patch, ..EvalConfig::default() };
            let rep = evaluate(&Oracle, &recs, &cfg).unwrap();
            let m = rep.metrics;
            assert_eq!((m.sn, m.sp, m.acc, m.f1), (Some(1.0), Some(1.0), Some(1.0), Some(1.0)));
            assert_eq!(rep.auc, Some(1.0));
            let tp: u64 = rep.per_image.iter().map(|e| e.counts.tp).sum();
            assert_eq!(rep.pooled.tp, tp);
        }
    }

    #[test]
    fn tiled_prediction_matches_full_frame() {
        let r = &oracle_records()[0];
        let full = predict_image(&Oracle, &r.image, None, 4).unwrap();
        let tiled = predict_image(&Oracle, &r.image, Some(32), 3).unwrap();
        assert_eq!(full, tiled);
        assert!(predict_image(&Oracle, &r.image, Some(48), 3).is_err());
    }

    #[test]
    fn per_image_auc_mode() {
        let recs = oracle_records();
        let cfg = EvalConfig {
            auc_mode: AucMode::PerImageMean,
            ..EvalConfig::default()
        };
        assert_eq!(evaluate(&Oracle, &recs, &cfg).unwrap().auc, Some(1.0));
        assert!(evaluate(&Oracle, &[], &cfg).is_err());
    }
}
