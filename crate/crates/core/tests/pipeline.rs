use lmbf::patch::netpbm;
use lmbf::patch::{
    augment, count_foreground, find_plan, manifest_csv, prepare, read_split, resize, select, stitch, synth_fundus, tile,
    tile_tensor, write_split, DatasetTag, FeatureTag, ResizeMode, Transform,
};
use lmbf::Tensor;
use proptest::prelude::*;

fn tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let data = (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 40) as f32 / (1u64 << 24) as f32
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

#[test]
fn disk_round_trip_then_prepare() {
    let dir = tempfile::tempdir().unwrap();
    let records: Vec<_> = (0..3).map(|s| synth_fundus(s, 64, FeatureTag::Vessels).unwrap()).collect();
    write_split(dir.path(), "train", &records).unwrap();
    let back = read_split(dir.path(), "train", DatasetTag::Synth, FeatureTag::Vessels).unwrap();
    assert_eq!(back.len(), 3);
    let mut patches = Vec::new();
    for r in &back {
        patches.extend(prepare(r, (64, 64), Some(32), 1).unwrap());
    }
    assert_eq!(patches.len(), 12);
    let manifest = manifest_csv(&patches);
    assert_eq!(manifest.lines().count(), 13);
    for p in &patches {
        assert_eq!(p.kept, p.fg_pixels >= 1);
        assert_eq!(p.fg_pixels, count_foreground(&p.mask_patch));
    }
}

#[test]
fn plan_resize_then_tile_matches_grid() {
    let plan = find_plan(DatasetTag::Stare, FeatureTag::Vessels).unwrap();
    let r = synth_fundus(5, 96, FeatureTag::Vessels).unwrap();
    let patches = prepare(&r, plan.resized, plan.patch, 1).unwrap();
    assert_eq!(patches.len(), plan.patches_per_image().unwrap());
    for p in &patches {
        assert_eq!(p.image_patch.shape(), [3, 128, 128]);
        // nearest-neighbour masks stay binary after resizing
        assert!(p.mask_patch.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

#[test]
fn lesion_selection_drops_empty_patches() {
    let r = synth_fundus(2, 128, FeatureTag::Microaneurysms).unwrap();
    let patches = tile(&r, 32).unwrap();
    let (kept, dropped) = select(patches, FeatureTag::Microaneurysms, 1);
    assert_eq!(kept.len() + dropped.len(), 16);
    assert!(kept.iter().all(|p| p.fg_pixels >= 1));
    assert!(dropped.iter().all(|p| p.fg_pixels == 0));
}

#[test]
fn augment_keeps_image_and_mask_aligned() {
    let r = synth_fundus(9, 64, FeatureTag::Vessels).unwrap();
    let p = &tile(&r, 32).unwrap()[1];
    let variants = augment(p).unwrap();
    assert_eq!(variants.len(), Transform::ALL.len());
    for (v, t) in variants.iter().zip(Transform::ALL) {
        assert_eq!(v.mask_patch, t.apply(&p.mask_patch).unwrap());
        assert_eq!(v.image_patch, t.apply(&p.image_patch).unwrap());
        assert_eq!(v.fg_pixels, p.fg_pixels);
        assert_eq!(count_foreground(&v.mask_patch), p.fg_pixels);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stitch_inverts_tile(rows in 1usize..5, cols in 1usize..5, p in 1usize..9, c in 1usize..4, seed: u64) {
        let t = tensor(&[c, rows * p, cols * p], seed);
        let tiles = tile_tensor(&t, p).unwrap();
        prop_assert_eq!(tiles.len(), rows * cols);
        prop_assert_eq!(stitch(&tiles, rows, cols).unwrap(), t);
    }

    #[test]
    fn transforms_are_bijections(s in 1usize..9, seed: u64) {
        let t = tensor(&[2, s, s], seed);
        let inverse = |tr| match tr {
            Transform::Rotate90 => Transform::Rotate270,
            Transform::Rotate270 => Transform::Rotate90,
            other => other,
        };
        for tr in Transform::ALL {
            let y = tr.apply(&t).unwrap();
            let mut a = y.data().to_vec();
            let mut b = t.data().to_vec();
            a.sort_by(f32::total_cmp);
            b.sort_by(f32::total_cmp);
            prop_assert_eq!(a, b);
            prop_assert_eq!(inverse(tr).apply(&y).unwrap(), t.clone());
        }
    }

    #[test]
    fn resize_to_same_size_is_identity(h in 1usize..12, w in 1usize..12, seed: u64) {
        let t = tensor(&[3, h, w], seed);
        prop_assert_eq!(resize(&t, h, w, ResizeMode::Bilinear).unwrap(), t.clone());
        prop_assert_eq!(resize(&t, h, w, ResizeMode::Nearest).unwrap(), t);
    }

    #[test]
    fn bilinear_stays_within_input_range(h in 2usize..10, w in 2usize..10, oh in 1usize..20, ow in 1usize..20, seed: u64) {
        let t = tensor(&[1, h, w], seed);
        let lo = t.data().iter().copied().fold(f32::INFINITY, f32::min);
        let hi = t.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let r = resize(&t, oh, ow, ResizeMode::Bilinear).unwrap();
        prop_assert!(r.data().iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
    }

    #[test]
    fn netpbm_round_trip_is_exact_on_8_bit_values(h in 1usize..10, w in 1usize..10, grey: bool, seed: u64) {
        let c = if grey { 1 } else { 3 };
        let t = tensor(&[c, h, w], seed).map(|v| (v * 255.0).round() / 255.0);
        let back = netpbm::decode(&netpbm::encode(&t).unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }
}
