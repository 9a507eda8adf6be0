//! Parameter handles for convolution and batch-norm layers, and the context
//! a forward pass runs in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::params::{ParamId, ParamKind, ParamStore};
use crate::error::Result;
use crate::graph::{Graph, TensorId};
use crate::nn::{BatchNormConfig, BnMode, ConvSpec};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Init {
    HeNormal,
    Zero,
}

/// Parameter storage as seen by a forward pass.
pub(crate) enum StoreRef<'a, T> {
    /// Batch statistics; running estimates are updated.
    Train(&'a mut ParamStore<T>),
    Eval(&'a ParamStore<T>),
}

pub(crate) struct Fwd<'a, T: Element> {
    pub g: &'a mut Graph<T>,
    pub ids: &'a [Option<TensorId>],
    pub store: StoreRef<'a, T>,
}

impl<T: Element> Fwd<'_, T> {
    fn param(&self, id: ParamId) -> TensorId {
        self.ids[id.0].expect("learnable parameter registered in graph")
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    weight: ParamId,
    bias: ParamId,
    spec: ConvSpec,
    transposed: bool,
}

impl Conv {
    pub fn apply<T: Element>(&self, f: &mut Fwd<'_, T>, x: TensorId) -> Result<TensorId> {
        let (w, b) = (f.param(self.weight), f.param(self.bias));
        if self.transposed {
            f.g.conv_transpose2d(x, w, Some(b), self.spec)
        } else {
            f.g.conv2d(x, w, Some(b), self.spec)
        }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Bn {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
    config: BatchNormConfig,
}

impl Bn {
    pub fn apply<T: Element>(&self, f: &mut Fwd<'_, T>, x: TensorId) -> Result<TensorId> {
        let (gamma, beta) = (f.param(self.gamma), f.param(self.beta));
        match &mut f.store {
            StoreRef::Train(s) => {
                let (running_mean, running_var) = s.pair_mut(self.mean, self.var);
                let mode = BnMode::Train {
                    running_mean,
                    running_var,
                };
                f.g.batchnorm(x, gamma, beta, mode, self.config)
            }
            StoreRef::Eval(s) => {
                let mode = BnMode::Eval {
                    running_mean: s.get(self.mean).data(),
                    running_var: s.get(self.var).data(),
                };
                f.g.batchnorm(x, gamma, beta, mode, self.config)
            }
        }
    }
}

/// `bn(relu(conv(x)))`
#[derive(Clone, Debug)]
pub(crate) struct ConvReluBn {
    pub conv: Conv,
    pub bn: Bn,
}

impl ConvReluBn {
    pub fn apply<T: Element>(&self, f: &mut Fwd<'_, T>, x: TensorId) -> Result<TensorId> {
        let y = self.conv.apply(f, x)?;
        let y = f.g.relu(y)?;
        self.bn.apply(f, y)
    }
}

/// Allocates named parameters in a store, drawing He-normal weights from a
/// seeded stream in construction order.
pub(crate) struct Builder<'a, T> {
    pub store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<'a, T: Element> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn weight(&mut self, shape: [usize; 4], init: Init) -> Result<Tensor<T>> {
        match init {
            Init::Zero => Tensor::zeros(&shape),
            Init::HeNormal => {
                let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                let n = shape.iter().product();
                let data = (0..n).map(|_| T::lit(normal.sample(&mut self.rng))).collect();
                Tensor::from_vec(&shape, data)
            }
        }
    }

    fn finish_conv(
        &mut self,
        name: &str,
        weight: Tensor<T>,
        out_ch: usize,
        spec: ConvSpec,
        transposed: bool,
    ) -> Result<Conv> {
        let weight = self.store.add(format!("{name}.weight"), weight, ParamKind::Learnable)?;
        let bias = self
            .store
            .add(format!("{name}.bias"), Tensor::zeros(&[out_ch])?, ParamKind::Learnable)?;
        Ok(Conv {
            weight,
            bias,
            spec,
            transposed,
        })
    }

    /// Forward convolution, weight `[out, in/groups, k, k]`.
    pub fn conv(
        &mut self,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        spec: ConvSpec,
        init: Init,
    ) -> Result<Conv> {
        check_groups(name, in_ch, out_ch, spec.groups)?;
        let w = self.weight([out_ch, in_ch / spec.groups, k, k], init)?;
        self.finish_conv(name, w, out_ch, spec, false)
    }

    /// Transposed convolution, weight `[in, out/groups, k, k]`.
    pub fn conv_transposed(
        &mut self,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        spec: ConvSpec,
    ) -> Result<Conv> {
        check_groups(name, in_ch, out_ch, spec.groups)?;
        let w = self.weight([in_ch, out_ch / spec.groups, k, k], Init::HeNormal)?;
        self.finish_conv(name, w, out_ch, spec, true)
    }

    pub fn bn(&mut self, name: &str, channels: usize) -> Result<Bn> {
        let mut add = |suffix: &str, t: Tensor<T>, kind| self.store.add(format!("{name}.{suffix}"), t, kind);
        Ok(Bn {
            gamma: add("gamma", Tensor::ones(&[channels])?, ParamKind::Learnable)?,
            beta: add("beta", Tensor::zeros(&[channels])?, ParamKind::Learnable)?,
            mean: add("running_mean", Tensor::zeros(&[channels])?, ParamKind::Buffer)?,
            var: add("running_var", Tensor::ones(&[channels])?, ParamKind::Buffer)?,
            config: BatchNormConfig::default(),
        })
    }

    pub fn conv_relu_bn(&mut self, name: &str, in_ch: usize, out_ch: usize, k: usize) -> Result<ConvReluBn> {
        Ok(ConvReluBn {
            conv: self.conv(&format!("{name}.conv"), in_ch, out_ch, k, ConvSpec::same(k), Init::HeNormal)?,
            bn: self.bn(&format!("{name}.bn"), out_ch)?,
        })
    }
}

fn check_groups(name: &str, in_ch: usize, out_ch: usize, groups: usize) -> Result<()> {
    if groups == 0 || in_ch % groups != 0 || out_ch % groups != 0 {
        return Err(crate::Error::Config(format!(
            "{name}: channels in={in_ch} out={out_ch} not divisible by groups={groups}"
        )));
    }
    Ok(())
}
