use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::net::ParamStore;
use crate::tensor::Element;

/// Bias-corrected Adam state for a list of parameter buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Element> AdamState<T> {
    pub fn new(sizes: &[usize], lr: f64) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// State for every entry of `store`; buffers get empty moments.
    pub fn for_store(store: &ParamStore<T>, lr: f64) -> Self {
        let sizes: Vec<usize> = store
            .entries()
            .iter()
            .map(|e| match e.kind {
                crate::net::ParamKind::Learnable => e.tensor.numel(),
                crate::net::ParamKind::Buffer => 0,
            })
            .collect();
        Self::new(&sizes, lr)
    }

    /// One update of every parameter. `grads[i]` must be present for each
    /// parameter `i`.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[Option<&[T]>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "adam holds {} parameters, got {} values and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            match g {
                None => return Err(Error::Contract(format!("missing gradient for parameter {i}"))),
                Some(g) if g.len() != params[i].len() => {
                    return Err(Error::mismatch("adam", &[params[i].len()], &[g.len()]))
                }
                _ => {}
            }
        }
        self.t += 1;
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].expect("checked above");
            self.update(i, p, g);
        }
        Ok(())
    }

    /// Update the learnable entries of `store` from the gradients of their
    /// graph leaves `ids` (as returned by [`ParamStore::register`]).
    pub fn step_store(&mut self, store: &mut ParamStore<T>, g: &Graph<T>, ids: &[Option<TensorId>]) -> Result<()> {
        let learnable: Vec<_> = store.learnable_ids().collect();
        let mut grads = Vec::with_capacity(learnable.len());
        for &id in &learnable {
            let missing = || Error::Contract(format!("missing gradient for {}", store.entry(id).name));
            let leaf = ids.get(id.index()).copied().flatten().ok_or_else(missing)?;
            let grad = g.grad(leaf).ok_or_else(missing)?;
            if grad.len() != self.m[id.index()].len() {
                return Err(Error::mismatch("adam", &[self.m[id.index()].len()], &[grad.len()]));
            }
            grads.push((id, grad));
        }
        self.t += 1;
        for (id, grad) in grads {
            self.update(id.index(), store.get_mut(id).data_mut(), grad);
        }
        Ok(())
    }

    fn update(&mut self, i: usize, p: &mut [T], g: &[T]) {
        let t = self.t as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (c1, c2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let bias1 = T::lit(1.0 - self.beta1.powi(t));
        let bias2 = T::lit(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        let (m, v) = (&mut self.m[i], &mut self.v[i]);
        for j in 0..p.len() {
            m[j] = b1 * m[j] + c1 * g[j];
            v[j] = b2 * v[j] + c2 * g[j] * g[j];
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            p[j] = p[j] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
