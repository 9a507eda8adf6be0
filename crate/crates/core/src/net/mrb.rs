//! Multipath residual block: three cascaded residual stages, each adding a
//! set of parallel `bn(relu(conv_k(x)))` branches to its input. The middle
//! stage uses grouped convolutions.

use super::layers::{Builder, ConvReluBn, Fwd, Init, StoreRef};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::nn::ConvSpec;
use crate::tensor::Element;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MrbConfig {
    pub channels: usize,
    /// Branch kernel sizes; odd.
    pub kernel_set: Vec<usize>,
    /// Groups of the middle cascade.
    pub groups: usize,
}

impl MrbConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            kernel_set: vec![1, 3, 5],
            groups: 4,
        }
    }

    pub fn with_kernels(mut self, kernels: &[usize]) -> Self {
        self.kernel_set = kernels.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.groups == 0 || self.channels % self.groups != 0 {
            return Err(Error::Config(format!(
                "MRB channels {} must be a positive multiple of groups {}",
                self.channels, self.groups
            )));
        }
        if self.kernel_set.is_empty() || self.kernel_set.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config(format!(
                "MRB kernel set {:?} must be non-empty and odd",
                self.kernel_set
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Mrb {
    channels: usize,
    cascades: Vec<Vec<ConvReluBn>>,
}

impl Mrb {
    pub fn build<T: Element>(b: &mut Builder<'_, T>, name: &str, cfg: &MrbConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let mut cascades = Vec::with_capacity(3);
        for stage in 0..3 {
            let groups = if stage == 1 { cfg.groups } else { 1 };
            let mut branches = Vec::with_capacity(cfg.kernel_set.len());
            for &k in &cfg.kernel_set {
                let n = format!("{name}.c{stage}.k{k}");
                branches.push(ConvReluBn {
                    conv: b.conv(&format!("{n}.conv"), c, c, k, ConvSpec::grouped(k, groups), Init::HeNormal)?,
                    bn: b.bn(&format!("{n}.bn"), c)?,
                });
            }
            cascades.push(branches);
        }
        Ok(Self { channels: c, cascades })
    }

    pub fn cascade<T: Element>(&self, f: &mut Fwd<'_, T>, stage: usize, x: TensorId) -> Result<TensorId> {
        let c = f.g.shape(x).get(1).copied().unwrap_or(0);
        if c != self.channels {
            return Err(Error::Config(format!(
                "MRB expects {} channels, input has {c}",
                self.channels
            )));
        }
        let mut acc = x;
        for branch in &self.cascades[stage] {
            let y = branch.apply(f, x)?;
            acc = f.g.add(acc, y)?;
        }
        Ok(acc)
    }

    pub fn apply<T: Element>(&self, f: &mut Fwd<'_, T>, x: TensorId) -> Result<TensorId> {
        (0..self.cascades.len()).try_fold(x, |cur, s| self.cascade(f, s, cur))
    }
}

/// A single MRB with its own parameters.
#[derive(Clone, Debug)]
pub struct MrbModule<T = f32> {
    pub store: ParamStore<T>,
    pub config: MrbConfig,
    block: Mrb,
}

impl<T: Element> MrbModule<T> {
    pub fn new(config: MrbConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let block = Mrb::build(&mut Builder::new(&mut store, seed), "mrb", &config)?;
        Ok(Self { store, config, block })
    }

    /// Forward with batch statistics; `ids` comes from
    /// [`ParamStore::register`] and may be edited to substitute leaves.
    pub fn forward_with(&mut self, g: &mut Graph<T>, x: TensorId, ids: &[Option<TensorId>]) -> Result<TensorId> {
        let mut f = Fwd {
            g,
            ids,
            store: StoreRef::Train(&mut self.store),
        };
        self.block.apply(&mut f, x)
    }

    pub fn forward(&mut self, g: &mut Graph<T>, x: TensorId) -> Result<TensorId> {
        let ids = self.store.register(g, true);
        self.forward_with(g, x, &ids)
    }

    /// One residual cascade (0, 1 or 2) on its own.
    pub fn forward_cascade(&mut self, g: &mut Graph<T>, stage: usize, x: TensorId) -> Result<TensorId> {
        if stage >= 3 {
            return Err(Error::Contract(format!("MRB has cascades 0..3, got {stage}")));
        }
        let ids = self.store.register(g, true);
        let mut f = Fwd {
            g,
            ids: &ids,
            store: StoreRef::Train(&mut self.store),
        };
        self.block.cascade(&mut f, stage, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::conv_param_count;
    use crate::tensor::Tensor;

    #[test]
    fn parameter_count_closed_form() {
        let m = MrbModule::<f32>::new(MrbConfig::new(16), 0).unwrap();
        let per_kernel = |g| [1, 3, 5].iter().map(|&k| conv_param_count(16, 16, k, g) + 32).sum::<usize>();
        assert_eq!(m.store.count().total, 2 * per_kernel(1) + per_kernel(4));
        assert_eq!(m.store.count().total, 20_592);
    }

    #[test]
    fn invalid_configs() {
        assert!(MrbModule::<f32>::new(MrbConfig::new(6), 0).is_err());
        assert!(MrbModule::<f32>::new(MrbConfig::new(8).with_kernels(&[2]), 0).is_err());
        assert!(MrbModule::<f32>::new(MrbConfig::new(8).with_kernels(&[]), 0).is_err());
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let mut m = MrbModule::<f64>::new(MrbConfig::new(4), 0).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[1, 8, 4, 4]).unwrap());
        assert!(matches!(m.forward(&mut g, x), Err(Error::Config(_))));
    }
}
