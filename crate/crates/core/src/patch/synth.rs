//! Procedural fundus-like images for desk-scale experiments.
//!
//! A dark background surrounds a circular field of view with a smooth
//! orange-red shading. Vessels are branching random walks that darken the
//! pixels they cover; lesions are bright or dark blobs; the optic disc is
//! one bright disc. The mask is exactly the set of modified pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tile::{count_foreground, DatasetTag, FeatureTag, ImageRecord};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Canvas {
    size: usize,
    image: Vec<f32>,
    mask: Vec<f32>,
    centre: f64,
    radius: f64,
}

impl Canvas {
    fn inside(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.centre, x - self.centre);
        dy * dy + dx * dx <= self.radius * self.radius
    }

    /// Mark a disc of radius `r` and scale its colour by `tint`.
    fn stamp(&mut self, cy: f64, cx: f64, r: f64, tint: [f32; 3]) {
        let s = self.size as f64;
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, (cy + r).ceil().min(s - 1.0) as usize);
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, (cx + r).ceil().min(s - 1.0) as usize);
        let plane = self.size * self.size;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (fy, fx) = (y as f64, x as f64);
                if (fy - cy).powi(2) + (fx - cx).powi(2) > r * r || !self.inside(fy, fx) {
                    continue;
                }
                let p = y * self.size + x;
                if self.mask[p] == 0.0 {
                    self.mask[p] = 1.0;
                    for (c, t) in tint.iter().enumerate() {
                        self.image[c * plane + p] *= t;
                    }
                }
            }
        }
    }
}

fn walk(canvas: &mut Canvas, rng: &mut ChaCha8Rng, mut y: f64, mut x: f64, mut angle: f64, mut width: f64, depth: u32) {
    let size = canvas.size as f64;
    let steps = (size * rng.random_range(0.35..0.7)) as usize;
    let turn = Normal::new(0.0, 0.12).expect("positive std");
    for _ in 0..steps {
        canvas.stamp(y, x, width, [0.55, 0.45, 0.6]);
        angle += turn.sample(rng);
        y += angle.sin();
        x += angle.cos();
        width = (width * 0.995).max(0.5);
        if !canvas.inside(y, x) {
            return;
        }
        if depth < 3 && rng.random_bool(0.025) {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let branch = angle + side * rng.random_range(0.4..0.9);
            walk(canvas, rng, y, x, branch, width * 0.75, depth + 1);
        }
    }
}

/// Deterministic synthetic record of `size × size` pixels.
pub fn synth_fundus(seed: u64, size: usize, feature: FeatureTag) -> Result<ImageRecord> {
    if size < 32 {
        return Err(Error::Config(format!("synthetic size {size} must be >= 32")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let plane = size * size;
    let mut canvas = Canvas {
        size,
        image: vec![0.03; 3 * plane],
        mask: vec![0.0; plane],
        centre: (s - 1.0) / 2.0,
        radius: 0.47 * s,
    };

    let base = [rng.random_range(0.7..0.85), rng.random_range(0.3..0.4), rng.random_range(0.1..0.18)];
    let (gy, gx) = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
    let noise = Normal::new(0.0, 0.01).expect("positive std");
    for y in 0..size {
        for x in 0..size {
            if !canvas.inside(y as f64, x as f64) {
                continue;
            }
            let shade = 1.0 + gy * (y as f64 / s - 0.5) + gx * (x as f64 / s - 0.5);
            for (c, b) in base.iter().enumerate() {
                let v = b * shade + noise.sample(&mut rng);
                canvas.image[c * plane + y * size + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }

    let unit = (s / 64.0).max(0.5);
    match feature {
        FeatureTag::Vessels => {
            let (dy, dx) = (rng.random_range(-0.1..0.1) * s, rng.random_range(-0.25..-0.1) * s);
            let (oy, ox) = (canvas.centre + dy, canvas.centre + dx);
            let trees = rng.random_range(3..6);
            for t in 0..trees {
                let angle = t as f64 * std::f64::consts::TAU / trees as f64 + rng.random_range(-0.3..0.3);
                let width = unit * rng.random_range(1.0..1.6);
                walk(&mut canvas, &mut rng, oy, ox, angle, width, 0);
            }
        }
        FeatureTag::OpticDisc => {
            let (cy, cx) = (canvas.centre + rng.random_range(-0.1..0.1) * s, canvas.centre - 0.25 * s);
            canvas.stamp(cy, cx, 0.09 * s, [1.25, 2.0, 2.5]);
        }
        lesion => {
            let (count, radius, tint) = match lesion {
                FeatureTag::HardExudates => (12, 1.2..2.5, [1.2, 2.2, 1.5]),
                FeatureTag::SoftExudates => (4, 2.5..4.5, [1.15, 1.8, 2.0]),
                FeatureTag::Microaneurysms => (15, 0.6..1.2, [0.45, 0.35, 0.5]),
                _ => (6, 1.5..3.5, [0.5, 0.3, 0.45]),
            };
            for _ in 0..count {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let d = canvas.radius * rng.random_range(0.0f64..0.85).sqrt();
                let r = unit * rng.random_range(radius.clone());
                canvas.stamp(canvas.centre + d * a.sin(), canvas.centre + d * a.cos(), r, tint);
            }
        }
    }
    if canvas.mask.iter().all(|&v| v == 0.0) {
        canvas.stamp(canvas.centre, canvas.centre, unit * 2.0, [0.5, 0.4, 0.5]);
    }
    for v in &mut canvas.image {
        *v = v.clamp(0.0, 1.0);
    }

    let record = ImageRecord::new(
        format!("synth_{seed:06}"),
        Tensor::from_vec(&[3, size, size], canvas.image)?,
        Tensor::from_vec(&[1, size, size], canvas.mask)?,
        DatasetTag::Synth,
        feature,
    )?;
    debug_assert!(count_foreground(&record.mask) * 2 < plane);
    Ok(record)
}
