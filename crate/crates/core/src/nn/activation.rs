use crate::error::Result;
use crate::graph::{Graph, Op, TensorId};
use crate::tensor::{Element, Tensor};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu_scalar<T: Element>(x: T) -> T {
    let inner = T::lit(SQRT_2_OVER_PI) * (x + T::lit(GELU_CUBIC) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_derivative<T: Element>(x: T) -> T {
    let c = T::lit(SQRT_2_OVER_PI);
    let a = T::lit(GELU_CUBIC);
    let t = (c * (x + a * x * x * x)).tanh();
    let half = T::lit(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

pub(crate) fn relu_backward<T: Element>(x: &[T], gy: &[T]) -> Vec<T> {
    x.iter()
        .zip(gy)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect()
}

pub(crate) fn gelu_backward<T: Element>(x: &[T], gy: &[T]) -> Vec<T> {
    x.iter().zip(gy).map(|(&v, &g)| g * gelu_derivative(v)).collect()
}

impl<T: Element> Graph<T> {
    /// `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        Ok(self.record(Op::Relu { x }, out))
    }

    pub fn gelu(&mut self, x: TensorId) -> Result<TensorId> {
        let out: Tensor<T> = self.value(x).map(gelu_scalar);
        Ok(self.record(Op::Gelu { x }, out))
    }
}
