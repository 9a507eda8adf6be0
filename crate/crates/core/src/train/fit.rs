//! The training loop.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use super::eval::{evaluate, EvalConfig};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::kv::{self, KeyValue};
use crate::metrics::{one_hot_foreground, ScalarMetrics, DICE_EPS};
use crate::net::LmbfNet;
use crate::patch::{ImageRecord, PatchRecord};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Vessels,
    Lesion,
}

impl Task {
    pub fn default_batch_size(self) -> usize {
        match self {
            Task::Vessels => 16,
            Task::Lesion => 4,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Vessels => "vessels",
            Task::Lesion => "lesion",
        })
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vessels" => Ok(Task::Vessels),
            "lesion" => Ok(Task::Lesion),
            _ => Err(Error::Config(format!("unknown task {s:?} (vessels|lesion)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub task: Task,
    /// Overwritten with the latest parameters after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn for_task(task: Task) -> Self {
        Self {
            lr: 1e-3,
            epochs: 150,
            iters_per_epoch: 250,
            batch_size: task.default_batch_size(),
            seed: 0,
            task,
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if self.epochs == 0 || self.iters_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs, iterations and batch size must be positive".into()));
        }
        Ok(())
    }

    /// Apply one entry; returns `false` if the key is not a training key.
    /// Setting `task` also resets the batch size to the task default unless
    /// `batch_size` is given as well.
    pub fn apply(&mut self, e: &KeyValue) -> Result<bool> {
        match e.key.as_str() {
            "lr" => self.lr = e.parse()?,
            "epochs" => self.epochs = e.parse()?,
            "iters_per_epoch" => self.iters_per_epoch = e.parse()?,
            "batch_size" => self.batch_size = e.parse()?,
            "seed" => self.seed = e.parse()?,
            "task" => {
                self.task = e.value.parse().map_err(|err: Error| e.error(err))?;
                self.batch_size = self.task.default_batch_size();
            }
            "checkpoint_dir" => self.checkpoint_dir = Some(PathBuf::from(&e.value)),
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = kv::parse(text)?;
        let mut cfg = Self::default();
        // task first so an explicit batch size wins
        for e in entries.iter().filter(|e| e.key == "task") {
            cfg.apply(e)?;
        }
        for e in entries.iter().filter(|e| e.key != "task") {
            if !cfg.apply(e)? {
                return Err(e.error("unknown training key"));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_task(Task::Vessels)
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "task = {}", self.task)?;
        writeln!(f, "lr = {}", self.lr)?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "iters_per_epoch = {}", self.iters_per_epoch)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "seed = {}", self.seed)?;
        if let Some(d) = &self.checkpoint_dir {
            writeln!(f, "checkpoint_dir = {}", d.display())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean Dice loss over the epoch's iterations.
    pub loss: f64,
    pub iterations: usize,
    /// Validation metrics, if validation records were given.
    pub metrics: Option<ScalarMetrics>,
    pub auc: Option<f64>,
}

impl EpochRecord {
    /// Mean training Dice coefficient, `1 − loss`.
    pub fn dice(&self) -> f64 {
        1.0 - self.loss
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    /// `epoch,loss,sn,sp,acc,f1,auc`; undefined values as `NA`.
    pub fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        let mut out = String::from("epoch,loss,sn,sp,acc,f1,auc\n");
        for e in &self.epochs {
            let m = e.metrics.unwrap_or(ScalarMetrics {
                sn: None,
                sp: None,
                acc: None,
                f1: None,
            });
            let _ = writeln!(
                out,
                "{},{:.8},{},{},{},{},{}",
                e.epoch,
                e.loss,
                opt(m.sn),
                opt(m.sp),
                opt(m.acc),
                opt(m.f1),
                opt(e.auc)
            );
        }
        out
    }
}

/// Optional per-epoch validation.
pub struct Validation<'a> {
    pub records: &'a [ImageRecord],
    pub config: EvalConfig,
}

struct Sample {
    image: Tensor<f32>,
    target: Tensor<f32>,
}

fn samples(patches: &[PatchRecord]) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for p in patches.iter().filter(|p| p.kept) {
        let &[1, h, w] = p.mask_patch.shape() else {
            return Err(Error::shape(p.mask_patch.shape(), "mask patch must be [1, h, w]"));
        };
        let target = one_hot_foreground(&p.mask_patch.clone().reshape(&[1, 1, h, w])?)?;
        out.push(Sample {
            image: p.image_patch.clone(),
            target: target.reshape(&[2, h, w])?,
        });
    }
    if out.is_empty() {
        return Err(Error::Contract("training needs at least one kept patch".into()));
    }
    Ok(out)
}

/// Train with Adam on the soft Dice loss.
///
/// Each epoch reshuffles the kept patches (one seeded stream for the whole
/// run) and takes `min(iters_per_epoch, ceil(n / batch_size))` steps over
/// consecutive batches; the last batch of an epoch may be short.
pub fn train(
    net: &mut LmbfNet<f32>,
    patches: &[PatchRecord],
    cfg: &TrainConfig,
    validation: Option<&Validation<'_>>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    cfg.validate()?;
    let data = samples(patches)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::for_store(net.store(), cfg.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let available = data.len().div_ceil(cfg.batch_size);
    let iterations = cfg.iters_per_epoch.min(available);
    let mut history = History::default();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (it, batch) in order.chunks(cfg.batch_size).take(iterations).enumerate() {
            let images: Vec<&Tensor<f32>> = batch.iter().map(|&i| &data[i].image).collect();
            let targets: Vec<&Tensor<f32>> = batch.iter().map(|&i| &data[i].target).collect();
            let mut g = Graph::new();
            let x = g.constant(Tensor::stack(&images)?);
            let t = g.constant(Tensor::stack(&targets)?);
            let (probs, ids) = net.forward_train(&mut g, x)?;
            let loss_id = g.dice_loss(probs, t, DICE_EPS)?;
            let loss = g.value(loss_id).item()? as f64;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    iteration: it + 1,
                    loss,
                });
            }
            g.backward(loss_id)?;
            adam.step_store(net.store_mut(), &g, &ids)?;
            total += loss;
        }
        let (metrics, auc) = match validation {
            Some(v) => {
                let report = evaluate(net, v.records, &v.config)?;
                (Some(report.metrics), report.auc)
            }
            None => (None, None),
        };
        if let Some(dir) = &cfg.checkpoint_dir {
            net.save(dir)?;
        }
        let record = EpochRecord {
            epoch,
            loss: total / iterations as f64,
            iterations,
            metrics,
            auc,
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok(history)
}
