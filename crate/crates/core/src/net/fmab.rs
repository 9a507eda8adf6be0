//! Focal modulation attention block.
//!
//! The input is batch-normalised first; without this the block is cubic in
//! its input scale. A 1×1 projection of the normalised input yields a query `q`, a context `z₀` and one gate
//! map per context level. Contexts are built hierarchically with depth-wise
//! convolutions `z_l = gelu(dw_l(z_{l−1}))`, plus an optional global level
//! `gelu(gap(z_L))`. The gated sum of contexts goes through a 1×1
//! convolution to form the modulator `m`, and the block returns
//! `proj(q ⊙ m) + x`.

use super::layers::{Bn, Builder, Conv, Fwd, Init, StoreRef};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::nn::ConvSpec;
use crate::tensor::Element;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FmabConfig {
    pub channels: usize,
    pub focal_levels: usize,
    pub level_kernels: Vec<usize>,
    pub include_global: bool,
}

impl FmabConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            focal_levels: 2,
            level_kernels: vec![3, 5],
            include_global: true,
        }
    }

    pub fn gate_count(&self) -> usize {
        self.focal_levels + usize::from(self.include_global)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.focal_levels == 0 {
            return Err(Error::Config("FMAB needs positive channels and focal levels".into()));
        }
        if self.level_kernels.len() != self.focal_levels {
            return Err(Error::Config(format!(
                "FMAB has {} focal levels but {} level kernels",
                self.focal_levels,
                self.level_kernels.len()
            )));
        }
        if self.level_kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config(format!(
                "FMAB level kernels {:?} must be odd",
                self.level_kernels
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Fmab {
    cfg: FmabConfig,
    norm: Bn,
    f: Conv,
    levels: Vec<Conv>,
    h: Conv,
    proj: Conv,
}

impl Fmab {
    pub fn build<T: Element>(b: &mut Builder<'_, T>, name: &str, cfg: &FmabConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let norm = b.bn(&format!("{name}.norm"), c)?;
        let f = b.conv(&format!("{name}.f"), c, 2 * c + cfg.gate_count(), 1, ConvSpec::same(1), Init::HeNormal)?;
        let levels = cfg
            .level_kernels
            .iter()
            .enumerate()
            .map(|(l, &k)| b.conv(&format!("{name}.level{l}"), c, c, k, ConvSpec::grouped(k, c), Init::HeNormal))
            .collect::<Result<_>>()?;
        let h = b.conv(&format!("{name}.h"), c, c, 1, ConvSpec::same(1), Init::HeNormal)?;
        let proj = b.conv(&format!("{name}.proj"), c, c, 1, ConvSpec::same(1), Init::HeNormal)?;
        Ok(Self {
            cfg: cfg.clone(),
            norm,
            f,
            levels,
            h,
            proj,
        })
    }

    pub fn apply<T: Element>(&self, fw: &mut Fwd<'_, T>, x: TensorId) -> Result<TensorId> {
        let c = self.cfg.channels;
        let xc = fw.g.shape(x).get(1).copied().unwrap_or(0);
        if xc != c {
            return Err(Error::Config(format!("FMAB expects {c} channels, input has {xc}")));
        }
        let xn = self.norm.apply(fw, x)?;
        let y = self.f.apply(fw, xn)?;
        let q = fw.g.narrow_channels(y, 0, c)?;
        let mut z = fw.g.narrow_channels(y, c, c)?;
        let gates = fw.g.narrow_channels(y, 2 * c, self.cfg.gate_count())?;

        let mut agg: Option<TensorId> = None;
        let mut push = |g: &mut Graph<T>, t: TensorId| -> Result<()> {
            agg = Some(match agg {
                Some(a) => g.add(a, t)?,
                None => t,
            });
            Ok(())
        };
        for (l, level) in self.levels.iter().enumerate() {
            let conv = level.apply(fw, z)?;
            z = fw.g.gelu(conv)?;
            let gate = fw.g.narrow_channels(gates, l, 1)?;
            let t = fw.g.mul(z, gate)?;
            push(fw.g, t)?;
        }
        if self.cfg.include_global {
            let pooled = fw.g.global_avg_pool(z)?;
            let global = fw.g.gelu(pooled)?;
            let gate = fw.g.narrow_channels(gates, self.cfg.focal_levels, 1)?;
            let t = fw.g.mul(global, gate)?;
            push(fw.g, t)?;
        }
        let agg = agg.expect("at least one focal level");
        let m = self.h.apply(fw, agg)?;
        let qm = fw.g.mul(q, m)?;
        let out = self.proj.apply(fw, qm)?;
        fw.g.add(out, x)
    }
}

/// A single FMAB with its own parameters.
#[derive(Clone, Debug)]
pub struct FmabModule<T = f32> {
    pub store: ParamStore<T>,
    pub config: FmabConfig,
    block: Fmab,
}

impl<T: Element> FmabModule<T> {
    pub fn new(config: FmabConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let block = Fmab::build(&mut Builder::new(&mut store, seed), "fmab", &config)?;
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
}
