//! Pooling, EER and MAC counting against independent brute-force references.

mod common;

use common::{assert_close, brute_force_eer, enumerate_macs, naive_asp};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redim_tensor::{Graph, Tensor};
use redimnet2::cost::{count_frames, LayerCost};
use redimnet2::eval::eer;
use redimnet2::model::{asp_pool, forward, init_params, Session, ASP_EPS};
use redimnet2::{ModelConfig, StageSpec};

#[test]
fn asp_matches_weighted_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::<f64>::randn(vec![2, 4, 8], 1.0, &mut rng);
    let w = Tensor::<f64>::randn(vec![3, 4], 0.8, &mut rng);
    let b = Tensor::<f64>::randn(vec![3], 0.5, &mut rng);
    let v = Tensor::<f64>::randn(vec![1, 3], 1.0, &mut rng);
    let mut g = Graph::new();
    let vars: Vec<_> = [&x, &w, &b, &v].iter().map(|t| g.input((*t).clone()).unwrap()).collect();
    let (pooled, alpha) = asp_pool(&mut g, vars[0], vars[1], Some(vars[2]), vars[3]).unwrap();
    let expect = naive_asp(&x, &w, b.data(), v.data(), ASP_EPS);
    assert_close(g.value(pooled).data(), &expect, 1e-6).unwrap();
    for row in g.value(alpha).data().chunks(8) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    assert!(expect.chunks(4).skip(1).step_by(2).flatten().all(|&s| s >= 0.0));
}

#[test]
fn eer_matches_exhaustive_threshold_search() {
    // Every labelling of every tie-free score set of size 2..=12, up to a
    // monotone transform of the scores.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in 2..=12usize {
        let mut scores: Vec<f64> = (0..n).map(|i| i as f64 + rng.random_range(0.0..0.5)).collect();
        scores.shuffle(&mut rng);
        for mask in 0u32..(1 << n) {
            let labels: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                assert!(eer(&labels, &scores).is_err());
                continue;
            }
            let (rate, _) = eer(&labels, &scores).unwrap();
            let oracle = brute_force_eer(&labels, &scores);
            assert!((rate - oracle).abs() < 1e-9, "n={n} mask={mask:b}: {rate} vs {oracle}");
        }
    }
}

#[test]
fn eer_is_invariant_under_monotone_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let labels: Vec<bool> = (0..40).map(|_| rng.random_bool(0.4)).collect();
    let scores: Vec<f64> = labels
        .iter()
        .map(|&l| rng.random_range(-1.0..1.0) + if l { 0.5 } else { 0.0 })
        .collect();
    let (base, _) = eer(&labels, &scores).unwrap();
    let squashed: Vec<f64> = scores.iter().map(|s| (3.0 * s).tanh() * 7.0 + 2.0).collect();
    assert!((eer(&labels, &squashed).unwrap().0 - base).abs() < 1e-12);
}

#[test]
fn single_layer_counts() {
    let conv = LayerCost::conv("c", 1, 1, 1, (3, 3), (8, 8), false);
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros(vec![1, 1, 8, 8])).unwrap();
    let w = g.input(Tensor::zeros(vec![1, 1, 3, 3])).unwrap();
    g.conv2d(x, w, None, (1, 1)).unwrap();
    assert_eq!(conv.macs, 576);
    assert_eq!(g.macs(), 576);
    let lin = LayerCost::linear("l", 4, 3, 5, true);
    assert_eq!((lin.macs, lin.params), (60, 15));
}

fn configs() -> Vec<ModelConfig> {
    let base = ModelConfig {
        name: "t".into(),
        c0: 2,
        f0: 8,
        stages: Vec::new(),
        kernel_1d: 3,
        heads: 2,
        asp_hidden: 4,
        embed_dim: 6,
    };
    vec![
        // stem, pooling and head only
        base.clone(),
        ModelConfig {
            stages: vec![StageSpec::new(1, 2).with_blocks(0, 0)],
            ..base.clone()
        },
        ModelConfig {
            stages: vec![StageSpec::new(2, 1), StageSpec::new(1, 2)],
            ..base.clone()
        },
        ModelConfig::toy(),
    ]
}

#[test]
fn report_matches_enumeration_and_executed_forward() {
    for cfg in configs() {
        let t = 4 * cfg.time_divisor();
        let report = count_frames(&cfg, t).unwrap();
        assert_eq!(report.frames, t);
        assert_eq!(report.macs, enumerate_macs(&cfg, t), "{}", cfg.name);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = init_params(&cfg, &mut rng).unwrap();
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::randn(vec![1, cfg.f0, t], 1.0, &mut rng)).unwrap();
        let mut s = Session::new(&mut g, &mut store, false);
        forward(&mut s, &cfg, x).unwrap();
        assert_eq!(report.macs, g.macs(), "{}", cfg.name);
        assert_eq!(report.params as usize, store.num_trainable(), "{}", cfg.name);
    }
}
