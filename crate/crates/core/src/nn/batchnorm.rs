use crate::error::{Error, Result};
use crate::graph::{Graph, Op, TensorId};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Where normalisation statistics come from.
pub enum BnMode<'a, T> {
    /// Batch statistics; running estimates are updated in place.
    Train {
        running_mean: &'a mut [T],
        running_var: &'a mut [T],
    },
    /// Stored running estimates.
    Eval {
        running_mean: &'a [T],
        running_var: &'a [T],
    },
}

/// Affine parameters and running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T = f64> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub config: BatchNormConfig,
    pub training: bool,
}

impl<T: Element> BatchNormParams<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: Tensor::ones(&[channels])?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::ones(&[channels])?,
            config: BatchNormConfig::default(),
            training: true,
        })
    }

    /// Register gamma/beta as differentiable leaves and normalise `x`.
    pub fn apply(&mut self, g: &mut Graph<T>, x: TensorId) -> Result<TensorId> {
        let gamma = g.param(self.gamma.clone());
        let beta = g.param(self.beta.clone());
        let mode = if self.training {
            BnMode::Train {
                running_mean: self.running_mean.data_mut(),
                running_var: self.running_var.data_mut(),
            }
        } else {
            BnMode::Eval {
                running_mean: self.running_mean.data(),
                running_var: self.running_var.data(),
            }
        };
        g.batchnorm(x, gamma, beta, mode, self.config)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BnCache<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    training: bool,
}

pub(crate) struct BnGrads<T> {
    pub dx: Vec<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

pub(crate) fn backward<T: Element>(
    cache: &BnCache<T>,
    x_shape: &[usize],
    gamma: &[T],
    gy: &[T],
) -> BnGrads<T> {
    let (n, c, plane) = (x_shape[0], x_shape[1], x_shape[2..].iter().product::<usize>());
    let m = T::lit((n * plane) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let s = (b * c + ch) * plane;
            for i in s..s + plane {
                dgamma[ch] = dgamma[ch] + gy[i] * cache.x_hat[i];
                dbeta[ch] = dbeta[ch] + gy[i];
            }
        }
    }
    let mut dx = vec![T::zero(); gy.len()];
    for b in 0..n {
        for ch in 0..c {
            let s = (b * c + ch) * plane;
            let scale = gamma[ch] * cache.inv_std[ch];
            for i in s..s + plane {
                dx[i] = if cache.training {
                    scale / m * (m * gy[i] - dbeta[ch] - cache.x_hat[i] * dgamma[ch])
                } else {
                    scale * gy[i]
                };
            }
        }
    }
    BnGrads { dx, dgamma, dbeta }
}

impl<T: Element> Graph<T> {
    /// Per-channel batch normalisation `gamma·x̂ + beta` over (batch, H, W).
    pub fn batchnorm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        mode: BnMode<'_, T>,
        config: BatchNormConfig,
    ) -> Result<TensorId> {
        let xt = self.value(x);
        if xt.rank() < 2 {
            return Err(Error::shape(xt.shape(), "batchnorm needs a channel axis"));
        }
        let shape = xt.shape().to_vec();
        let (n, c) = (shape[0], shape[1]);
        let plane: usize = shape[2..].iter().product();
        let count = n * plane;
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            if self.value(id).numel() != c {
                return Err(Error::mismatch(name, self.shape(id), &[c]));
            }
        }
        if config.eps <= 0.0 {
            return Err(Error::Config("batchnorm eps must be > 0".into()));
        }
        let eps = T::lit(config.eps);
        let data = xt.data();
        let training = matches!(mode, BnMode::Train { .. });

        let (mean, var) = match &mode {
            BnMode::Train { .. } => {
                if count < 2 {
                    return Err(Error::DegenerateStatistics(count));
                }
                channel_stats(data, n, c, plane)
            }
            BnMode::Eval {
                running_mean,
                running_var,
            } => {
                if running_mean.len() != c || running_var.len() != c {
                    return Err(Error::mismatch("running stats", &[running_mean.len()], &[c]));
                }
                (running_mean.to_vec(), running_var.to_vec())
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut x_hat = vec![T::zero(); data.len()];
        let mut out = vec![T::zero(); data.len()];
        for b in 0..n {
            for ch in 0..c {
                let s = (b * c + ch) * plane;
                for i in s..s + plane {
                    x_hat[i] = (data[i] - mean[ch]) * inv_std[ch];
                    out[i] = gv[ch] * x_hat[i] + bv[ch];
                }
            }
        }

        if let BnMode::Train {
            running_mean,
            running_var,
        } = mode
        {
            let mom = T::lit(config.momentum);
            let unbias = T::lit(count as f64 / (count as f64 - 1.0));
            for ch in 0..c {
                running_mean[ch] = (T::one() - mom) * running_mean[ch] + mom * mean[ch];
                running_var[ch] = (T::one() - mom) * running_var[ch] + mom * var[ch] * unbias;
            }
        }

        let out = Tensor::from_vec(&shape, out)?;
        let cache = BnCache {
            x_hat,
            inv_std,
            training,
        };
        Ok(self.record(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            },
            out,
        ))
    }
}

/// Per-channel mean and biased variance. A constant channel gets its value
/// as the exact mean, so `x − mean` is exactly zero there.
fn channel_stats<T: Element>(data: &[T], n: usize, c: usize, plane: usize) -> (Vec<T>, Vec<T>) {
    let count = T::lit((n * plane) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let values = (0..n).flat_map(|b| {
            let s = (b * c + ch) * plane;
            data[s..s + plane].iter().copied()
        });
        let first = data[ch * plane];
        let mut constant = true;
        let mut sum = T::zero();
        for v in values.clone() {
            sum = sum + v;
            constant &= v == first;
        }
        if constant {
            mean[ch] = first;
            continue;
        }
        let mu = sum / count;
        mean[ch] = mu;
        var[ch] = values.map(|v| (v - mu) * (v - mu)).sum::<T>() / count;
    }
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(x: Tensor<f64>, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let c = x.shape()[1];
        let mut g = Graph::new();
        let xi = g.constant(x);
        let gi = g.param(Tensor::from_vec(&[c], gamma.to_vec()).unwrap());
        let bi = g.param(Tensor::from_vec(&[c], beta.to_vec()).unwrap());
        let (mut rm, mut rv) = (vec![0.0; c], vec![1.0; c]);
        let y = g
            .batchnorm(
                xi,
                gi,
                bi,
                BnMode::Train {
                    running_mean: &mut rm,
                    running_var: &mut rv,
                },
                BatchNormConfig::default(),
            )
            .unwrap();
        (g.value(y).data().to_vec(), rm, rv)
    }

    #[test]
    fn hand_normalised_values() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, rm, rv) = run(x, &[1.0], &[0.0]);
        let expect = [-1.3416, -0.4472, 0.4472, 1.3416];
        for (a, e) in y.iter().zip(expect) {
            assert!((a - e).abs() < 1e-3);
        }
        // mean 2.5, unbiased var 5/3
        assert!((rm[0] - 0.25).abs() < 1e-12);
        assert!((rv[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn already_normalised_passes_through() {
        let x = Tensor::from_vec(&[4, 1, 1, 1], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let (y, ..) = run(x.clone(), &[1.0], &[0.0]);
        for (a, b) in y.iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_channel_yields_beta() {
        let mut data = vec![0.1; 8];
        data.extend((0..8).map(|i| i as f64));
        let x = Tensor::from_vec(&[2, 2, 2, 2], {
            // interleave so channel 0 is constant in both batch items
            let mut v = Vec::new();
            v.extend_from_slice(&data[0..4]);
            v.extend_from_slice(&data[8..12]);
            v.extend_from_slice(&data[4..8]);
            v.extend_from_slice(&data[12..16]);
            v
        })
        .unwrap();
        let (y, ..) = run(x, &[2.0, 1.0], &[0.7, 0.0]);
        for b in 0..2 {
            assert!(y[b * 8..b * 8 + 4].iter().all(|&v| v == 0.7));
        }
    }

    #[test]
    fn degenerate_batch_is_rejected() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[1, 2, 1, 1]).unwrap());
        let gm = g.param(Tensor::ones(&[2]).unwrap());
        let bt = g.param(Tensor::zeros(&[2]).unwrap());
        let (mut rm, mut rv) = (vec![0.0; 2], vec![1.0; 2]);
        let r = g.batchnorm(
            x,
            gm,
            bt,
            BnMode::Train {
                running_mean: &mut rm,
                running_var: &mut rv,
            },
            BatchNormConfig::default(),
        );
        assert!(matches!(r, Err(Error::DegenerateStatistics(1))));
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut p = BatchNormParams::<f64>::new(1).unwrap();
        p.training = false;
        p.running_mean = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        p.running_var = Tensor::from_vec(&[1], vec![4.0 - 1e-5]).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[1, 1, 1, 2], vec![3.0, 5.0]).unwrap());
        let y = p.apply(&mut g, x).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] - 2.0).abs() < 1e-12);
    }
}
