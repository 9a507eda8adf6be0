use crate::error::Result;
use crate::graph::{Graph, Op, TensorId};
use crate::tensor::{Element, Tensor};

pub(crate) fn softmax_channels_backward<T: Element>(y: &Tensor<T>, gy: &[T]) -> Result<Vec<T>> {
    let [n, c, h, w] = y.dims4()?;
    let plane = h * w;
    let yd = y.data();
    let mut gx = vec![T::zero(); yd.len()];
    for b in 0..n {
        let base = b * c * plane;
        for p in 0..plane {
            let dot: T = (0..c).map(|ch| gy[base + ch * plane + p] * yd[base + ch * plane + p]).sum();
            for ch in 0..c {
                let i = base + ch * plane + p;
                gx[i] = yd[i] * (gy[i] - dot);
            }
        }
    }
    Ok(gx)
}

impl<T: Element> Graph<T> {
    /// Softmax across the channel axis of each pixel, stabilised by
    /// subtracting the per-pixel maximum.
    pub fn softmax_channels(&mut self, x: TensorId) -> Result<TensorId> {
        let t = self.value(x);
        let [n, c, h, w] = t.dims4()?;
        let plane = h * w;
        let xd = t.data();
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..n {
            let base = b * c * plane;
            for p in 0..plane {
                let idx = |ch: usize| base + ch * plane + p;
                let m = (0..c).map(|ch| xd[idx(ch)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for ch in 0..c {
                    let e = (xd[idx(ch)] - m).exp();
                    out[idx(ch)] = e;
                    z = z + e;
                }
                for ch in 0..c {
                    out[idx(ch)] = out[idx(ch)] / z;
                }
            }
        }
        let out = Tensor::from_vec(&[n, c, h, w], out)?;
        Ok(self.record(Op::SoftmaxChannels { x }, out))
    }
}
