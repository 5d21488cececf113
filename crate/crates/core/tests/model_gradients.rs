//! End-to-end gradients of the toy network and loss against central
//! finite differences in f64.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use redim_tensor::{grad_check, GradCheckOptions, Tensor};
use redimnet2::model::{forward, init_params, ParamStore, Session};
use redimnet2::objective::{init_loss_head, sf2c_loss, LOSS_BIAS, LOSS_WEIGHT};
use redimnet2::{ModelConfig, StageSpec};

fn small_config() -> ModelConfig {
    ModelConfig {
        name: "grad".into(),
        c0: 2,
        f0: 8,
        stages: vec![StageSpec::new(1, 2), StageSpec::new(2, 1)],
        kernel_1d: 3,
        heads: 2,
        asp_hidden: 4,
        embed_dim: 6,
    }
}

#[test]
fn toy_model_loss_gradients_match_finite_differences() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store32 = init_params(&cfg, &mut rng).unwrap();
    init_loss_head(&mut store32, 3, cfg.embed_dim, &mut rng);
    // Perturb zero-initialized entries so no gradient is trivially tiny.
    let mut store: ParamStore<f64> = store32.cast();
    let names: Vec<String> = store.trainable().map(|(n, _)| n.to_string()).collect();
    for (i, n) in names.iter().enumerate() {
        let t = store.get_mut(n).unwrap();
        let noise = Tensor::<f64>::randn(t.shape().to_vec(), 0.1, &mut ChaCha8Rng::seed_from_u64(100 + i as u64));
        for (v, e) in t.data_mut().iter_mut().zip(noise.data()) {
            *v += e;
        }
    }
    let params: Vec<Tensor<f64>> = names.iter().map(|n| store.get(n).unwrap().clone()).collect();
    let x = Tensor::<f64>::randn(vec![2, 8, 8], 1.0, &mut rng);
    let labels = [0usize, 2];
    let report = grad_check(
        |g, vars| {
            let xv = g.input(x.clone())?;
            let mut s = Session::new(g, &mut store, true);
            for (n, &v) in names.iter().zip(vars) {
                s.bind(n, v);
            }
            let out = forward(&mut s, &cfg, xv).map_err(|e| match e {
                redimnet2::Error::Tensor(t) => t,
                other => panic!("{other}"),
            })?;
            let w = s.p(LOSS_WEIGHT).unwrap();
            let b = s.p(LOSS_BIAS).unwrap();
            drop(s);
            sf2c_loss(g, out.embedding, &labels, w, b, 0.2, 4.0).map_err(|e| match e {
                redimnet2::Error::Tensor(t) => t,
                other => panic!("{other}"),
            })
        },
        &params,
        GradCheckOptions {
            coords_per_param: 6,
            ..Default::default()
        },
    )
    .unwrap();
    println!("{report:?} worst param {}", names[report.worst.0]);
    assert!(report.max_rel_error < 1e-4, "{report:?} worst param {}", names[report.worst.0]);
}
