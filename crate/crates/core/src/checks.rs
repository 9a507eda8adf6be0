//! Finite-difference checks of every differentiable operation and block,
//! in double precision with fixed seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{gradcheck, GradcheckReport};
use crate::graph::{Graph, TensorId};
use crate::metrics::DICE_EPS;
use crate::net::{make_ablation, AblationId, FmabConfig, FmabModule, LmbfNet, Mode, MrbConfig, MrbModule, NetworkConfig, ParamId};
use crate::nn::{BatchNormConfig, BnMode, ConvSpec};
use crate::tensor::Tensor;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
const WARMUP_PASSES: usize = 20;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub report: GradcheckReport,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("valid shape")
}

/// Values at least `gap` away from zero, with random sign.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let mut t = uniform(rng, shape, gap, 1.0);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// `Σ y ⊙ r` for a fixed random `r`, reducing any output to a scalar
/// whose gradient reaches every element.
fn weighted_sum(g: &mut Graph<f64>, y: TensorId, seed: u64) -> Result<TensorId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = g.constant(uniform(&mut rng, g.shape(y), -1.0, 1.0));
    let p = g.mul(y, r)?;
    g.sum(p)
}

fn run(
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    f: impl FnMut(&mut Graph<f64>, &[TensorId]) -> Result<TensorId>,
) -> Result<CheckResult> {
    Ok(CheckResult {
        name,
        report: gradcheck(f, &inputs, EPS, TOL)?,
    })
}

fn conv_case(
    name: &'static str,
    seed: u64,
    x: &[usize],
    w: &[usize],
    spec: ConvSpec,
    transposed: bool,
) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out_ch = if transposed { w[1] * spec.groups } else { w[0] };
    let inputs = vec![
        uniform(&mut rng, x, -1.0, 1.0),
        uniform(&mut rng, w, -1.0, 1.0),
        uniform(&mut rng, &[out_ch], -1.0, 1.0),
    ];
    run(name, inputs, move |g, ids| {
        let y = if transposed {
            g.conv_transpose2d(ids[0], ids[1], Some(ids[2]), spec)?
        } else {
            g.conv2d(ids[0], ids[1], Some(ids[2]), spec)?
        };
        weighted_sum(g, y, seed)
    })
}

/// Substitute gradcheck leaves for the chosen parameters.
fn override_ids(base: Vec<Option<TensorId>>, params: &[ParamId], leaves: &[TensorId]) -> Vec<Option<TensorId>> {
    let mut ids = base;
    for (p, &leaf) in params.iter().zip(leaves) {
        ids[p.index()] = Some(leaf);
    }
    ids
}

pub fn mrb_case(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut module = MrbModule::<f64>::new(MrbConfig::new(8), seed)?;
    let params: Vec<ParamId> = module.store.learnable_ids().collect();
    let mut inputs = vec![uniform(&mut rng, &[2, 8, 4, 4], -1.0, 1.0)];
    inputs.extend(params.iter().map(|&p| module.store.get(p).clone()));
    run("mrb_forward", inputs, move |g, ids| {
        let base = module.store.register(g, false);
        let ids_all = override_ids(base, &params, &ids[1..]);
        let y = module.forward_with(g, ids[0], &ids_all)?;
        weighted_sum(g, y, seed)
    })
}

pub fn fmab_case(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut module = FmabModule::<f64>::new(FmabConfig::new(8), seed)?;
    let params: Vec<ParamId> = module.store.learnable_ids().collect();
    let mut inputs = vec![uniform(&mut rng, &[1, 8, 8, 8], -1.0, 1.0)];
    inputs.extend(params.iter().map(|&p| module.store.get(p).clone()));
    run("fmab_forward", inputs, move |g, ids| {
        let base = module.store.register(g, false);
        let ids_all = override_ids(base, &params, &ids[1..]);
        let y = module.forward_with(g, ids[0], &ids_all)?;
        weighted_sum(g, y, seed)
    })
}

/// The width-reduced network used for whole-model checks.
pub fn reduced_config() -> NetworkConfig {
    NetworkConfig {
        input_size: (16, 16),
        ..make_ablation(AblationId::Full).with_widths(4, [4, 8, 8])
    }
}

/// Parameters inside an MRB (`<layer>.c<stage>.…`) or the FMAB.
fn in_block(name: &str) -> bool {
    name.starts_with("fmab.")
        || name
            .split('.')
            .nth(1)
            .and_then(|s| s.strip_prefix('c'))
            .is_some_and(|s| s.parse::<usize>().is_ok())
}

/// Two passes (one reverse pass) of the width-reduced network on a
/// 1×3×16×16 input. Checks the input and every learnable tensor outside the
/// MRB and FMAB blocks, which have their own cases. Reverse adapters get
/// random non-zero weights so the second pass depends on the first.
///
/// Batch norm runs on running statistics gathered by a few training passes
/// over the same input. With batch statistics, a bias feeding relu → batch
/// norm only moves the loss through the few inactive units, leaving
/// derivatives around 1e-9 that central differences cannot resolve.
pub fn network_case(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = LmbfNet::<f64>::build(reduced_config(), seed)?;
    for p in net.reverse_adapter_params() {
        let shape = net.store().get(p).shape().to_vec();
        *net.store_mut().get_mut(p) = uniform(&mut rng, &shape, -0.3, 0.3);
    }
    let store = net.store();
    let params: Vec<ParamId> = store
        .learnable_ids()
        .filter(|&p| !in_block(&store.entry(p).name))
        .collect();
    let x = uniform(&mut rng, &[1, 3, 16, 16], -1.0, 1.0);
    for _ in 0..WARMUP_PASSES {
        let mut g = Graph::new();
        let ids = net.store().register(&mut g, false);
        let xi = g.constant(x.clone());
        net.forward_passes(&mut g, xi, &ids, Mode::Train, 1)?;
    }
    let store = net.store();
    let mut inputs = vec![x];
    inputs.extend(params.iter().map(|&p| store.get(p).clone()));
    run("forward_bidirectional", inputs, move |g, ids| {
        let base = net.store().register(g, false);
        let ids_all = override_ids(base, &params, &ids[1..]);
        let y = net.forward_passes(g, ids[0], &ids_all, Mode::Eval, 1)?;
        weighted_sum(g, y[1], seed)
    })
}

/// Every case of the suite, in a fixed order.
pub fn gradient_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![
        conv_case("conv2d", seed, &[2, 2, 5, 5], &[3, 2, 3, 3], ConvSpec::same(3), false)?,
        conv_case(
            "conv2d_strided",
            seed + 1,
            &[1, 2, 6, 6],
            &[2, 2, 3, 3],
            ConvSpec {
                stride: 2,
                padding: 1,
                groups: 1,
            },
            false,
        )?,
        conv_case("conv2d_grouped", seed + 2, &[1, 4, 5, 5], &[4, 2, 3, 3], ConvSpec::grouped(3, 2), false)?,
        conv_case("conv2d_depthwise", seed + 3, &[1, 3, 5, 5], &[3, 1, 5, 5], ConvSpec::grouped(5, 3), false)?,
        conv_case("conv_transpose2d", seed + 4, &[1, 2, 3, 3], &[2, 3, 2, 2], ConvSpec::upsample(1), true)?,
        conv_case(
            "conv_transpose2d_depthwise",
            seed + 5,
            &[2, 3, 3, 3],
            &[3, 1, 2, 2],
            ConvSpec::upsample(3),
            true,
        )?,
    ];

    let bn_inputs = vec![
        uniform(&mut rng, &[2, 3, 3, 3], -1.0, 1.0),
        uniform(&mut rng, &[3], 0.5, 1.5),
        uniform(&mut rng, &[3], -0.5, 0.5),
    ];
    out.push(run("batchnorm_train", bn_inputs.clone(), move |g, ids| {
        let (mut m, mut v) = (vec![0.0; 3], vec![1.0; 3]);
        let mode = BnMode::Train {
            running_mean: &mut m,
            running_var: &mut v,
        };
        let y = g.batchnorm(ids[0], ids[1], ids[2], mode, BatchNormConfig::default())?;
        weighted_sum(g, y, seed)
    })?);
    out.push(run("batchnorm_eval", bn_inputs, move |g, ids| {
        let mode = BnMode::Eval {
            running_mean: &[0.1, -0.2, 0.3],
            running_var: &[0.5, 1.5, 2.0],
        };
        let y = g.batchnorm(ids[0], ids[1], ids[2], mode, BatchNormConfig::default())?;
        weighted_sum(g, y, seed)
    })?);

    out.push(run("relu", vec![off_kink(&mut rng, &[2, 3, 4, 4], 0.01)], move |g, ids| {
        let y = g.relu(ids[0])?;
        weighted_sum(g, y, seed)
    })?);
    out.push(run("gelu", vec![uniform(&mut rng, &[2, 3, 4, 4], -3.0, 3.0)], move |g, ids| {
        let y = g.gelu(ids[0])?;
        weighted_sum(g, y, seed)
    })?);

    // distinct values at least 0.01 apart so no window holds a near-tie
    let mut values: Vec<f64> = (0..2 * 2 * 4 * 4).map(|i| i as f64 * 0.01 - 0.3).collect();
    for i in (1..values.len()).rev() {
        values.swap(i, rng.random_range(0..=i));
    }
    let pool_x = Tensor::from_vec(&[2, 2, 4, 4], values)?;
    out.push(run("maxpool2d", vec![pool_x], move |g, ids| {
        let y = g.maxpool2d(ids[0])?;
        weighted_sum(g, y, seed)
    })?);
    out.push(run("global_avg_pool", vec![uniform(&mut rng, &[2, 3, 3, 4], -1.0, 1.0)], move |g, ids| {
        let y = g.global_avg_pool(ids[0])?;
        weighted_sum(g, y, seed)
    })?);
    out.push(run("softmax_channels", vec![uniform(&mut rng, &[2, 3, 3, 3], -2.0, 2.0)], move |g, ids| {
        let y = g.softmax_channels(ids[0])?;
        weighted_sum(g, y, seed)
    })?);

    let fg: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut probs = fg.iter().map(|p| 1.0 - p).collect::<Vec<_>>();
    probs.extend(&fg);
    let mut target: Vec<f64> = (0..16).map(|_| f64::from(u8::from(rng.random_bool(0.4)))).collect();
    target = target.iter().map(|t| 1.0 - t).chain(target.iter().copied()).collect();
    let target = Tensor::from_vec(&[1, 2, 4, 4], target)?;
    out.push(run("dice_loss", vec![Tensor::from_vec(&[1, 2, 4, 4], probs)?], move |g, ids| {
        let t = g.constant(target.clone());
        g.dice_loss(ids[0], t, DICE_EPS)
    })?);

    let a = uniform(&mut rng, &[2, 3, 2, 2], -1.0, 1.0);
    let b = uniform(&mut rng, &[2, 1, 2, 2], -1.0, 1.0);
    out.push(run("add_mul_broadcast", vec![a, b], move |g, ids| {
        let p = g.mul(ids[0], ids[1])?;
        let s = g.add(p, ids[1])?;
        let n = g.narrow_channels(s, 1, 2)?;
        weighted_sum(g, n, seed)
    })?);

    out.push(mrb_case(seed)?);
    out.push(fmab_case(seed)?);
    out.push(network_case(seed)?);
    Ok(out)
}
