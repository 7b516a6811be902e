//! Closed-form oracles and randomized invariants for the dynamic layers and metrics.

use std::collections::HashSet;

use dynconv::layers::attention::{apply_channel_gate, channel_attention};
use dynconv::layers::bank::rotate90_ccw;
use dynconv::layers::{build_model, ConvUnit, DynamicConfig, Mixing, Mode, ModelSpec, ParamStore, Preset, Task};
use dynconv::metrics::{kfold_stats, miou, FoldResult};
use dynconv::tensor::{conv2d, ConvSpec};
use dynconv::{Prng, Tensor};
use proptest::prelude::*;

const DYN: DynamicConfig = DynamicConfig { bank_size: 4, kr_dim: 3, reduction: 2 };

fn unit(store: &mut ParamStore, mixing: Mixing, cfg: &DynamicConfig, cin: usize, cout: usize, seed: u64) -> ConvUnit {
    let mut rng = Prng::new(seed);
    ConvUnit::new(store, &mut rng, "u", mixing, cin, cout, (3, 3), ConvSpec::uniform(1, 1), cfg)
}

/// Sets the generator's output layer so every sample gets `logits`.
fn force_logits(store: &mut ParamStore, logits: &[f64]) {
    let w2 = store.get(store.find("u.gen.w2").unwrap()).shape().to_vec();
    store.set("u.gen.w2", Tensor::zeros(&w2)).unwrap();
    store.set("u.gen.b2", Tensor::new(vec![logits.len()], logits.to_vec()).unwrap()).unwrap();
}

fn kr_zeros(u: &ConvUnit, n: usize) -> Option<Tensor> {
    u.uses_kr().then(|| Tensor::zeros(&[n, DYN.kr_dim]))
}

/// Brute-force mIoU from per-class pixel sets.
fn miou_by_sets(pred: &[usize], gt: &[usize], classes: usize) -> f64 {
    let set = |m: &[usize], c: usize| -> HashSet<usize> { m.iter().enumerate().filter(|(_, &v)| v == c).map(|(i, _)| i).collect() };
    let total: f64 = (0..classes)
        .map(|c| {
            let (p, g) = (set(pred, c), set(gt, c));
            let union = p.union(&g).count();
            if union == 0 {
                1.0
            } else {
                p.intersection(&g).count() as f64 / union as f64
            }
        })
        .sum();
    total / classes as f64
}

#[test]
fn one_hot_attention_reduces_to_static_conv() {
    for (seed, mixing) in [(0, Mixing::Soft), (1, Mixing::Hard { k_active: 1 }), (2, Mixing::Hard { k_active: 2 })] {
        for hot in 0..DYN.bank_size {
            let mut store = ParamStore::new();
            let u = unit(&mut store, mixing, &DYN, 2, 3, seed);
            let mut logits = vec![0.0; DYN.bank_size];
            logits[hot] = 1e4;
            force_logits(&mut store, &logits);
            let x = Tensor::randn(&[2, 2, 5, 5], 1.0, &mut Prng::new(seed + 10));
            let (y, _, _) = u.forward(&store, &x, kr_zeros(&u, 2).as_ref()).unwrap();
            let bank = store.get(store.find("u.bank").unwrap());
            let len = bank.len() / DYN.bank_size;
            let kernel = Tensor::new(vec![3, 2, 3, 3], bank.data()[hot * len..(hot + 1) * len].to_vec()).unwrap();
            let expected = conv2d(&x, &kernel, ConvSpec::uniform(1, 1)).unwrap();
            assert!(y.max_abs_diff(&expected) <= 1e-12, "{mixing:?} kernel {hot}");
        }
    }
}

#[test]
fn single_kernel_banks_match_base_cnn() {
    let mut rng = Prng::new(5);
    let x = Tensor::randn(&[3, 1, 8, 8], 1.0, &mut rng);
    let spec = |p: Preset| ModelSpec::new(p, Task::Classify, &[1, 8, 8], 3).with_width(0.25).with_depth(1).with_bank_size(1).with_kr_dim(4);
    let base = build_model(&spec(Preset::BaseCnn), &mut Prng::new(1)).unwrap();
    let expected = base.forward(&x, Mode::Eval).unwrap().logits;
    for preset in [Preset::LocalSoft, Preset::HardAttention] {
        let mut model = build_model(&spec(preset), &mut Prng::new(2)).unwrap();
        model.transfer_from(&base, 0.0, &mut Prng::new(3)).unwrap();
        let got = model.forward(&x, Mode::Eval).unwrap().logits;
        assert!(got.max_abs_diff(&expected) <= 1e-10, "{preset}");
    }
}

#[test]
fn identity_gate_is_exact() {
    let f = Tensor::randn(&[3, 4, 5, 5], 2.0, &mut Prng::new(9));
    assert_eq!(apply_channel_gate(&f, &Tensor::full(&[3, 4], 1.0)).unwrap(), f);
}

#[test]
fn uniform_orientation_attention_is_rotation_equivariant() {
    let cfg = DynamicConfig { bank_size: 1, kr_dim: 0, reduction: 1 };
    let mut rng = Prng::new(77);
    for seed in 0..100 {
        let mut store = ParamStore::new();
        let u = unit(&mut store, Mixing::Oriented, &cfg, 1, 1, seed);
        force_logits(&mut store, &[0.0; 8]);
        let x = Tensor::randn(&[1, 1, 5, 5], 1.0, &mut rng);
        let (y, _, _) = u.forward(&store, &x, None).unwrap();
        let (y_rot, _, _) = u.forward(&store, &rotate90_ccw(&x).unwrap(), None).unwrap();
        assert!(y_rot.max_abs_diff(&rotate90_ccw(&y).unwrap()) <= 1e-6, "seed {seed}");
    }
}

#[test]
fn fold_statistics_use_population_std() {
    let table = |acc: &[f64]| -> Vec<FoldResult> {
        acc.iter().enumerate().map(|(i, &a)| FoldResult { fold_index: i, loss: f64::NAN, accuracy: a }).collect()
    };
    let cnn = kfold_stats(&table(&[0.506, 0.564, 0.526, 0.462, 0.654, 0.590, 0.590, 0.551, 0.615, 0.654])).unwrap();
    let dcnn = kfold_stats(&table(&[0.620, 0.692, 0.641, 0.551, 0.667, 0.641, 0.603, 0.615, 0.782, 0.718])).unwrap();
    for (got, want) in [(cnn.mean, 0.571), (cnn.std, 0.059), (dcnn.mean, 0.653), (dcnn.std, 0.062)] {
        assert!((got - want).abs() <= 5e-4, "{got} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn channel_attention_is_open_unit_interval(
        feats in prop::collection::vec(-5.0f64..5.0, 2 * 3 * 4),
        weight in prop::collection::vec(-3.0f64..3.0, 9),
        bias in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        let f = Tensor::new(vec![2, 3, 2, 2], feats).unwrap();
        let a = channel_attention(&f, &Tensor::new(vec![3, 3], weight).unwrap(), &Tensor::new(vec![3], bias).unwrap()).unwrap();
        prop_assert!(a.weights.data().iter().all(|&w| w > 0.0 && w < 1.0));
    }

    #[test]
    fn miou_matches_set_brute_force(
        classes in 2usize..6,
        pairs in prop::collection::vec((0usize..6, 0usize..6), 1..64),
    ) {
        let pred: Vec<usize> = pairs.iter().map(|p| p.0 % classes).collect();
        let gt: Vec<usize> = pairs.iter().map(|p| p.1 % classes).collect();
        let got = miou(&pred, &gt, classes).unwrap();
        prop_assert!((got - miou_by_sets(&pred, &gt, classes)).abs() <= 1e-12);
        prop_assert_eq!(miou(&gt, &gt, classes).unwrap(), 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_std_is_shift_invariant_and_bounded(acc in prop::collection::vec(0.0f64..0.9, 2..12), shift in 0.0f64..0.1) {
        let folds = |d: f64| -> Vec<FoldResult> {
            acc.iter().enumerate().map(|(i, &a)| FoldResult { fold_index: i, loss: 0.0, accuracy: a + d }).collect()
        };
        let a = kfold_stats(&folds(0.0)).unwrap();
        let b = kfold_stats(&folds(shift)).unwrap();
        prop_assert!((b.mean - a.mean - shift).abs() <= 1e-12);
        prop_assert!((b.std - a.std).abs() <= 1e-12);
        let spread = acc.iter().cloned().fold(f64::MIN, f64::max) - acc.iter().cloned().fold(f64::MAX, f64::min);
        prop_assert!(a.std <= spread / 2.0 + 1e-12);
    }
}
