use lmbf::net::{make_ablation, AblationId, FmabConfig, FmabModule, LmbfNet, Mode, NetworkConfig};
use lmbf::{Graph, Tensor};
use proptest::prelude::*;

fn small(id: AblationId, h: usize, w: usize) -> NetworkConfig {
    NetworkConfig {
        input_size: (h, w),
        ..make_ablation(id).with_widths(4, [4, 8, 8])
    }
}

fn images(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut s = seed | 1;
    let data = (0..n * 3 * h * w)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s % 1000) as f32 / 1000.0
        })
        .collect();
    Tensor::from_vec(&[n, 3, h, w], data).unwrap()
}

#[test]
fn every_ablation_row_builds_and_runs() {
    for id in AblationId::ALL {
        let net = LmbfNet::<f32>::build(small(id, 16, 16), 0).unwrap();
        let y = net.predict(&images(2, 16, 16, 1)).unwrap();
        assert_eq!(y.shape(), [2, 2, 16, 16], "{id}");
        assert!(y.all_finite());
    }
}

#[test]
fn save_load_preserves_predictions() {
    let mut net = LmbfNet::<f32>::build(small(AblationId::Full, 16, 16), 3).unwrap();
    // a training pass moves the running statistics away from their defaults
    let mut g = Graph::new();
    let x = g.constant(images(2, 16, 16, 5));
    net.forward_train(&mut g, x).unwrap();
    let dir = tempfile::tempdir().unwrap();
    net.save(dir.path()).unwrap();
    let back = LmbfNet::<f32>::load(dir.path()).unwrap();
    assert_eq!(back.config(), net.config());
    let probe = images(1, 16, 16, 9);
    assert_eq!(back.predict(&probe).unwrap(), net.predict(&probe).unwrap());
}

#[test]
fn zero_reverse_passes_has_no_adapters() {
    let cfg = NetworkConfig {
        reverse_passes: 0,
        ..small(AblationId::Full, 16, 16)
    };
    let net = LmbfNet::<f32>::build(cfg, 0).unwrap();
    assert!(net.reverse_adapter_params().is_empty());
    assert!(!net.count_params().per_layer.iter().any(|(n, _)| n.starts_with("rev")));
}

#[test]
fn zero_initialised_adapters_make_passes_agree() {
    let mut net = LmbfNet::<f32>::build(small(AblationId::Full, 16, 16), 2).unwrap();
    let mut g = Graph::new();
    let ids = net.store().register(&mut g, false);
    let x = g.constant(images(1, 16, 16, 4));
    let outs = net.forward_passes(&mut g, x, &ids, Mode::Eval, 2).unwrap();
    assert_eq!(outs.len(), 3);
    assert_eq!(g.value(outs[0]), g.value(outs[2]));
}

#[test]
fn f64_cast_matches_f32_closely() {
    let net = LmbfNet::<f32>::build(small(AblationId::Full, 16, 16), 6).unwrap();
    let wide = net.cast::<f64>();
    let x = images(1, 16, 16, 8);
    let a = net.predict(&x).unwrap();
    let b = wide.predict(&x.cast::<f64>()).unwrap();
    let worst = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| (p as f64 - q).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn fmab_zero_projection_is_identity() {
    let mut m = FmabModule::<f64>::new(FmabConfig::new(8), 1).unwrap();
    for name in ["fmab.proj.weight", "fmab.proj.bias"] {
        let id = m.store.find(name).unwrap();
        let t = m.store.get_mut(id);
        *t = Tensor::zeros_like(t);
    }
    let mut g = Graph::new();
    let x = Tensor::from_vec(&[1, 8, 6, 8], (0..384).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect()).unwrap();
    let xi = g.constant(x.clone());
    let y = m.forward(&mut g, xi).unwrap();
    assert_eq!(g.value(y).data(), x.data());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn output_is_a_distribution_of_input_size(h8 in 1usize..4, w8 in 1usize..4, n in 1usize..3, seed: u64) {
        let (h, w) = (8 * h8, 8 * w8);
        let net = LmbfNet::<f32>::build(small(AblationId::Full, h, w), seed % 7).unwrap();
        let y = net.predict(&images(n, h, w, seed)).unwrap();
        prop_assert_eq!(y.shape(), &[n, 2, h, w]);
        let plane = h * w;
        for b in 0..n {
            for i in 0..plane {
                let s = y.data()[(2 * b) * plane + i] + y.data()[(2 * b + 1) * plane + i];
                prop_assert!((s - 1.0).abs() <= 1e-6);
            }
        }
    }
}
