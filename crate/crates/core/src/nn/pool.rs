use crate::error::{Error, Result};
use crate::graph::{Graph, Op, TensorId};
use crate::tensor::{Element, Tensor};

pub(crate) fn maxpool2d_backward<T: Element>(argmax: &[usize], x_len: usize, gy: &[T]) -> Vec<T> {
    let mut gx = vec![T::zero(); x_len];
    for (&src, &g) in argmax.iter().zip(gy) {
        gx[src] = gx[src] + g;
    }
    gx
}

pub(crate) fn global_avg_pool_backward<T: Element>(x_shape: &[usize], gy: &[T]) -> Vec<T> {
    let plane: usize = x_shape[2..].iter().product();
    let scale = T::one() / T::lit(plane as f64);
    gy.iter()
        .flat_map(|&g| std::iter::repeat_n(g * scale, plane))
        .collect()
}

impl<T: Element> Graph<T> {
    /// 2×2 max pooling with stride 2. Ties go to the first element in scan
    /// order, which also receives the whole gradient.
    pub fn maxpool2d(&mut self, x: TensorId) -> Result<TensorId> {
        let t = self.value(x);
        let [n, c, h, w] = t.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(t.shape(), "maxpool2d needs even H and W"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let data = t.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + 2 * y * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * y + dy) * w + 2 * xx + dx;
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::from_vec(&[n, c, oh, ow], out)?;
        Ok(self.record(Op::MaxPool2d { x, argmax }, out))
    }

    /// Spatial mean per channel: `[N, C, H, W] → [N, C, 1, 1]`.
    pub fn global_avg_pool(&mut self, x: TensorId) -> Result<TensorId> {
        let t = self.value(x);
        let [n, c, h, w] = t.dims4()?;
        let plane = h * w;
        let denom = T::lit(plane as f64);
        let out: Vec<T> = t
            .data()
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() / denom)
            .collect();
        let out = Tensor::from_vec(&[n, c, 1, 1], out)?;
        Ok(self.record(Op::GlobalAvgPool { x }, out))
    }
}
