//! Soft Dice loss over one-hot targets, averaged over classes.

use crate::error::{Error, Result};
use crate::graph::{Graph, Op, TensorId};
use crate::tensor::{Element, Tensor};

pub const DICE_EPS: f64 = 1e-5;

/// Per-class sums `(Σ p·g, Σ p, Σ g)` over batch and space.
fn class_sums<T: Element>(probs: &Tensor<T>, target: &Tensor<T>) -> Result<Vec<(f64, f64, f64)>> {
    if probs.shape() != target.shape() {
        return Err(Error::mismatch("dice_loss", probs.shape(), target.shape()));
    }
    let [n, c, h, w] = probs.dims4()?;
    let plane = h * w;
    let mut sums = vec![(0.0, 0.0, 0.0); c];
    for b in 0..n {
        for (ch, s) in sums.iter_mut().enumerate() {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                let (p, g) = (probs.data()[i].to_f64(), target.data()[i].to_f64());
                s.0 += p * g;
                s.1 += p;
                s.2 += g;
            }
        }
    }
    Ok(sums)
}

/// Class-averaged soft Dice coefficient.
pub fn dice_coefficient<T: Element>(probs: &Tensor<T>, target: &Tensor<T>, eps: f64) -> Result<f64> {
    let sums = class_sums(probs, target)?;
    let c = sums.len() as f64;
    Ok(sums
        .iter()
        .map(|&(i, p, g)| (2.0 * i + eps) / (p + g + eps))
        .sum::<f64>()
        / c)
}

pub(crate) fn dice_loss_backward<T: Element>(
    probs: &Tensor<T>,
    target: &Tensor<T>,
    eps: f64,
    gy: T,
) -> Result<Vec<T>> {
    let sums = class_sums(probs, target)?;
    let [n, c, h, w] = probs.dims4()?;
    let plane = h * w;
    let scale = gy.to_f64() / c as f64;
    let mut gx = vec![T::zero(); probs.numel()];
    for b in 0..n {
        for (ch, &(i, p, g)) in sums.iter().enumerate() {
            let den = p + g + eps;
            let num = 2.0 * i + eps;
            let off = (b * c + ch) * plane;
            for k in off..off + plane {
                let gk = target.data()[k].to_f64();
                gx[k] = T::lit(-scale * (2.0 * gk * den - num) / (den * den));
            }
        }
    }
    Ok(gx)
}

impl<T: Element> Graph<T> {
    /// `1 − (1/C)·Σ_c (2·Σ p·g + ε) / (Σ p + Σ g + ε)`.
    pub fn dice_loss(&mut self, probs: TensorId, target: TensorId, eps: f64) -> Result<TensorId> {
        let coef = dice_coefficient(self.value(probs), self.value(target), eps)?;
        Ok(self.record(
            Op::DiceLoss { probs, target, eps },
            Tensor::scalar(T::lit(1.0 - coef)),
        ))
    }
}

/// `[N,1,H,W]` binary mask → `[N,2,H,W]` one-hot (background, foreground).
pub fn one_hot_foreground<T: Element>(mask: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = mask.dims4()?;
    if c != 1 {
        return Err(Error::shape(mask.shape(), "one-hot source must have one channel"));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(2 * mask.numel());
    for b in 0..n {
        let m = &mask.data()[b * plane..(b + 1) * plane];
        data.extend(m.iter().map(|&v| T::one() - v));
        data.extend_from_slice(m);
    }
    Tensor::from_vec(&[n, 2, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss(p: Tensor<f64>, g: Tensor<f64>) -> f64 {
        let mut gr = Graph::new();
        let p = gr.constant(p);
        let g = gr.constant(g);
        let l = gr.dice_loss(p, g, DICE_EPS).unwrap();
        gr.value(l).item().unwrap()
    }

    #[test]
    fn perfect_overlap() {
        let m = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let oh = one_hot_foreground(&m).unwrap();
        assert!(loss(oh.clone(), oh) < 1e-5);
    }

    #[test]
    fn uniform_half_probabilities() {
        // evaluated from the loss definition: each class has Σg = 2, Σp = 2,
        // Σpg = 1, so loss = 1 − (2 + ε)/(4 + ε)
        let m = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let gt = one_hot_foreground(&m).unwrap();
        let p = Tensor::full(&[1, 2, 2, 2], 0.5).unwrap();
        let expect = 1.0 - (2.0 + DICE_EPS) / (4.0 + DICE_EPS);
        assert!((loss(p, gt) - expect).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let mut gr = Graph::<f64>::new();
        let p = gr.constant(Tensor::zeros(&[1, 2, 2, 2]).unwrap());
        let g = gr.constant(Tensor::zeros(&[1, 2, 2, 3]).unwrap());
        assert!(matches!(gr.dice_loss(p, g, DICE_EPS), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn moving_mass_to_correct_class_lowers_loss() {
        let m = Tensor::from_vec(&[1, 1, 1, 4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let gt = one_hot_foreground(&m).unwrap();
        let mut prev = f64::INFINITY;
        for step in 0..=10 {
            let q = 0.5 + 0.05 * step as f64;
            let fg: Vec<f64> = m.data().iter().map(|&g| if g == 1.0 { q } else { 1.0 - q }).collect();
            let mut data: Vec<f64> = fg.iter().map(|v| 1.0 - v).collect();
            data.extend(&fg);
            let l = loss(Tensor::from_vec(&[1, 2, 1, 4], data).unwrap(), gt.clone());
            assert!(l < prev);
            assert!((0.0..=1.0).contains(&l));
            prev = l;
        }
    }
}
