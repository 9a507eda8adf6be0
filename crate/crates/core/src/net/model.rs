//! The assembled encoder–decoder.
//!
//! ```text
//! stem  conv3(3→s) relu bn                         @H
//! enc1  [1×1 s→c1] block(c1)              = skip1  @H
//! enc2  pool [1×1 c1→c2] block(c2)        = skip2  @H/2
//! lvl3  pool [1×1 c2→c3]                  = skip3  @H/4
//! neck  pool [fmab(c3)]                            @H/8
//! dec3  up(c3) + skip3, block(c3)                  @H/4
//! dec2  up(c3) + skip2, [1×1 c3→c1] block(c1)      @H/2
//! dec1  up(c1) + skip1, conv3(c1→s) relu bn        @H
//! head  conv1(s→classes) softmax
//! ```
//!
//! Upsampling is a depth-wise 2×2 stride-2 transposed convolution. With
//! reverse passes enabled, each further pass re-runs the network with the
//! previous pass's `dec1`, `dec2`, `dec3` outputs added (through
//! zero-initialised 1×1 adapters) to the inputs of `enc1`, `enc2` and
//! `lvl3`. All passes share weights.

use std::fs;
use std::path::Path;

use super::config::{BlockKind, NetworkConfig};
use super::fmab::Fmab;
use super::layers::{Builder, Conv, ConvReluBn, Fwd, Init, StoreRef};
use super::mrb::Mrb;
use super::params::{ParamCount, ParamId, ParamStore};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::nn::ConvSpec;
use crate::tensor::{Element, Tensor};

pub const CONFIG_FILE: &str = "network.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running estimates updated.
    Train,
    /// Running estimates.
    Eval,
}

#[derive(Clone, Debug)]
enum Block {
    Mrb(Mrb),
    Plain(ConvReluBn),
}

impl Block {
    fn build<T: Element>(b: &mut Builder<'_, T>, name: &str, cfg: &NetworkConfig, c: usize) -> Result<Self> {
        Ok(match cfg.block {
            BlockKind::Mrb => Block::Mrb(Mrb::build(b, name, &cfg.mrb(c))?),
            BlockKind::Plain => Block::Plain(b.conv_relu_bn(name, c, c, 3)?),
        })
    }

    fn apply<T: Element>(&self, f: &mut Fwd<'_, T>, x: TensorId) -> Result<TensorId> {
        match self {
            Block::Mrb(m) => m.apply(f, x),
            Block::Plain(p) => p.apply(f, x),
        }
    }
}

fn adapter<T: Element>(b: &mut Builder<'_, T>, name: &str, from: usize, to: usize) -> Result<Option<Conv>> {
    if from == to {
        return Ok(None);
    }
    b.conv(name, from, to, 1, ConvSpec::same(1), Init::HeNormal).map(Some)
}

fn adapt<T: Element>(f: &mut Fwd<'_, T>, conv: &Option<Conv>, x: TensorId) -> Result<TensorId> {
    match conv {
        Some(c) => c.apply(f, x),
        None => Ok(x),
    }
}

#[derive(Clone, Debug)]
struct Layers {
    stem: ConvReluBn,
    enc1_in: Option<Conv>,
    enc1: Block,
    enc2_in: Option<Conv>,
    enc2: Block,
    level3_in: Option<Conv>,
    fmab: Option<Fmab>,
    up1: Conv,
    dec3: Block,
    up2: Conv,
    dec2_skip: Option<Conv>,
    dec2_in: Option<Conv>,
    dec2: Block,
    up3: Conv,
    dec1: ConvReluBn,
    head: Conv,
    /// dec1→enc1, dec2→enc2, dec3→lvl3
    reverse: Option<[Conv; 3]>,
}

/// Decoder outputs of one pass, fed back on the next.
struct Decoded {
    dec1: TensorId,
    dec2: TensorId,
    dec3: TensorId,
}

impl Layers {
    fn build<T: Element>(b: &mut Builder<'_, T>, cfg: &NetworkConfig) -> Result<Self> {
        let s = cfg.stem_channels;
        let [c1, c2, c3] = cfg.stage_channels;
        let up = |b: &mut Builder<'_, T>, name: &str, c: usize| {
            b.conv_transposed(name, c, c, 2, ConvSpec::upsample(c))
        };
        Ok(Self {
            stem: b.conv_relu_bn("stem", 3, s, 3)?,
            enc1_in: adapter(b, "enc1.in", s, c1)?,
            enc1: Block::build(b, "enc1", cfg, c1)?,
            enc2_in: adapter(b, "enc2.in", c1, c2)?,
            enc2: Block::build(b, "enc2", cfg, c2)?,
            level3_in: adapter(b, "level3.in", c2, c3)?,
            fmab: if cfg.use_fmab {
                Some(Fmab::build(b, "fmab", &cfg.fmab())?)
            } else {
                None
            },
            up1: up(b, "up1", c3)?,
            dec3: Block::build(b, "dec3", cfg, c3)?,
            up2: up(b, "up2", c3)?,
            dec2_skip: adapter(b, "dec2.skip", c2, c3)?,
            dec2_in: adapter(b, "dec2.in", c3, c1)?,
            dec2: Block::build(b, "dec2", cfg, c1)?,
            up3: up(b, "up3", c1)?,
            dec1: b.conv_relu_bn("dec1", c1, s, 3)?,
            head: b.conv("head", s, cfg.num_classes, 1, ConvSpec::same(1), Init::HeNormal)?,
            reverse: if cfg.reverse_passes > 0 {
                let zero = |b: &mut Builder<'_, T>, name: &str, from, to| {
                    b.conv(name, from, to, 1, ConvSpec::same(1), Init::Zero)
                };
                Some([zero(b, "rev1", s, c1)?, zero(b, "rev2", c1, c2)?, zero(b, "rev3", c3, c3)?])
            } else {
                None
            },
        })
    }

    fn pass<T: Element>(
        &self,
        f: &mut Fwd<'_, T>,
        x: TensorId,
        prev: Option<&Decoded>,
    ) -> Result<(TensorId, Decoded)> {
        let inject = |f: &mut Fwd<'_, T>, t: TensorId, k: usize, pick: fn(&Decoded) -> TensorId| {
            match (prev, &self.reverse) {
                (Some(p), Some(rev)) => {
                    let r = rev[k].apply(f, pick(p))?;
                    f.g.add(t, r)
                }
                _ => Ok(t),
            }
        };

        let stem = self.stem.apply(f, x)?;
        let e1 = adapt(f, &self.enc1_in, stem)?;
        let e1 = inject(f, e1, 0, |d| d.dec1)?;
        let skip1 = self.enc1.apply(f, e1)?;

        let p1 = f.g.maxpool2d(skip1)?;
        let e2 = adapt(f, &self.enc2_in, p1)?;
        let e2 = inject(f, e2, 1, |d| d.dec2)?;
        let skip2 = self.enc2.apply(f, e2)?;

        let p2 = f.g.maxpool2d(skip2)?;
        let l3 = adapt(f, &self.level3_in, p2)?;
        let skip3 = inject(f, l3, 2, |d| d.dec3)?;

        let mut neck = f.g.maxpool2d(skip3)?;
        if let Some(fmab) = &self.fmab {
            neck = fmab.apply(f, neck)?;
        }

        let u1 = self.up1.apply(f, neck)?;
        let u1 = f.g.add(u1, skip3)?;
        let dec3 = self.dec3.apply(f, u1)?;

        let u2 = self.up2.apply(f, dec3)?;
        let s2 = adapt(f, &self.dec2_skip, skip2)?;
        let u2 = f.g.add(u2, s2)?;
        let u2 = adapt(f, &self.dec2_in, u2)?;
        let dec2 = self.dec2.apply(f, u2)?;

        let u3 = self.up3.apply(f, dec2)?;
        let u3 = f.g.add(u3, skip1)?;
        let dec1 = self.dec1.apply(f, u3)?;

        let logits = self.head.apply(f, dec1)?;
        let probs = f.g.softmax_channels(logits)?;
        Ok((probs, Decoded { dec1, dec2, dec3 }))
    }

    fn run<T: Element>(&self, f: &mut Fwd<'_, T>, x: TensorId, reverse_passes: usize) -> Result<Vec<TensorId>> {
        if reverse_passes > 0 && self.reverse.is_none() {
            return Err(Error::Config(
                "reverse passes requested but the network was built with reverse_passes = 0".into(),
            ));
        }
        let shape = f.g.shape(x);
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::shape(shape, "network input must be N x 3 x H x W"));
        }
        let mut outputs = Vec::with_capacity(reverse_passes + 1);
        let mut prev: Option<Decoded> = None;
        for _ in 0..=reverse_passes {
            let (probs, dec) = self.pass(f, x, prev.as_ref())?;
            outputs.push(probs);
            prev = Some(dec);
        }
        Ok(outputs)
    }
}

#[derive(Clone, Debug)]
pub struct LmbfNet<T = f32> {
    config: NetworkConfig,
    store: ParamStore<T>,
    layers: Layers,
}

impl<T: Element> LmbfNet<T> {
    /// Build with He-normal weights drawn from `seed`.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let layers = Layers::build(&mut Builder::new(&mut store, seed), &config)?;
        Ok(Self { config, store, layers })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn count_params(&self) -> ParamCount {
        self.store.count()
    }

    /// Weights and biases of the reverse-pass adapters.
    pub fn reverse_adapter_params(&self) -> Vec<ParamId> {
        self.layers
            .reverse
            .iter()
            .flatten()
            .flat_map(|c| [c.weight(), c.bias()])
            .collect()
    }

    pub fn cast<U: Element>(&self) -> LmbfNet<U> {
        LmbfNet {
            config: self.config.clone(),
            store: self.store.cast(),
            layers: self.layers.clone(),
        }
    }

    /// Softmax output of every pass (plain pass first) using parameter
    /// leaves `ids` from [`ParamStore::register`].
    pub fn forward_passes(
        &mut self,
        g: &mut Graph<T>,
        x: TensorId,
        ids: &[Option<TensorId>],
        mode: Mode,
        reverse_passes: usize,
    ) -> Result<Vec<TensorId>> {
        let store = match mode {
            Mode::Train => StoreRef::Train(&mut self.store),
            Mode::Eval => StoreRef::Eval(&self.store),
        };
        let mut f = Fwd { g, ids, store };
        self.layers.run(&mut f, x, reverse_passes)
    }

    /// Final-pass softmax with the configured number of reverse passes.
    pub fn forward_bidirectional(
        &mut self,
        g: &mut Graph<T>,
        x: TensorId,
        ids: &[Option<TensorId>],
        mode: Mode,
    ) -> Result<TensorId> {
        let passes = self.config.reverse_passes;
        let outs = self.forward_passes(g, x, ids, mode, passes)?;
        Ok(*outs.last().expect("at least one pass"))
    }

    /// Training forward: registers parameters as differentiable leaves and
    /// returns the output with the leaf ids (indexed by [`ParamId`]).
    pub fn forward_train(&mut self, g: &mut Graph<T>, x: TensorId) -> Result<(TensorId, Vec<Option<TensorId>>)> {
        let ids = self.store.register(g, true);
        let y = self.forward_bidirectional(g, x, &ids, Mode::Train)?;
        Ok((y, ids))
    }

    /// Inference forward with running statistics; records no tape.
    pub fn forward_eval(&self, g: &mut Graph<T>, x: TensorId) -> Result<TensorId> {
        let ids = self.store.register(g, false);
        let mut f = Fwd {
            g,
            ids: &ids,
            store: StoreRef::Eval(&self.store),
        };
        let outs = self.layers.run(&mut f, x, self.config.reverse_passes)?;
        Ok(*outs.last().expect("at least one pass"))
    }

    /// Class probabilities `[N, classes, H, W]` for images `[N, 3, H, W]`.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let y = self.forward_eval(&mut g, x)?;
        Ok(g.take(y))
    }

    /// Write the config and every tensor (including running statistics).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, self.config.to_string()).map_err(|e| Error::io(path, e))?;
        checkpoint::save_checkpoint(
            dir,
            self.store.entries().iter().map(|e| (e.name.as_str(), &e.tensor)),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut net = Self::build(NetworkConfig::parse(&text)?, 0)?;
        net.store.load_named(checkpoint::load_checkpoint(dir)?)?;
        Ok(net)
    }
}
