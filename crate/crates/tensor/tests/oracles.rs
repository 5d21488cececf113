//! Engine ops against direct-loop reference implementations.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use redim_tensor::{AttentionParams, Graph, Tensor};

fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, stride: (usize, usize)) -> Vec<f64> {
    let (b, cin, f, t) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (cout, kf, kt) = (w.dim(0), w.dim(2), w.dim(3));
    let (fo, to) = (f / stride.0, t / stride.1);
    let (pf, pt) = ((kf - 1) as isize / 2, (kt - 1) as isize / 2);
    let mut out = vec![0.0; b * cout * fo * to];
    for bi in 0..b {
        for co in 0..cout {
            for i in 0..fo {
                for j in 0..to {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for a in 0..kf {
                            for c in 0..kt {
                                let fi = (i * stride.0 + a) as isize - pf;
                                let ti = (j * stride.1 + c) as isize - pt;
                                if fi >= 0 && ti >= 0 && (fi as usize) < f && (ti as usize) < t {
                                    acc += w.at(&[co, ci, a, c]) * x.at(&[bi, ci, fi as usize, ti as usize]);
                                }
                            }
                        }
                    }
                    out[((bi * cout + co) * fo + i) * to + j] = acc;
                }
            }
        }
    }
    out
}

fn naive_depthwise(x: &Tensor<f64>, w: &Tensor<f64>) -> Vec<f64> {
    let (b, c, t) = (x.dim(0), x.dim(1), x.dim(2));
    let k = w.dim(2);
    let pad = (k as isize - 1) / 2;
    let mut out = vec![0.0; b * c * t];
    for bi in 0..b {
        for ch in 0..c {
            for ti in 0..t {
                let mut acc = 0.0;
                for kk in 0..k {
                    let s = ti as isize + kk as isize - pad;
                    if s >= 0 && (s as usize) < t {
                        acc += w.at(&[ch, 0, kk]) * x.at(&[bi, ch, s as usize]);
                    }
                }
                out[(bi * c + ch) * t + ti] = acc;
            }
        }
    }
    out
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
    }
}

#[test]
fn conv2d_matches_six_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::<f64>::randn(vec![1, 2, 6, 6], 1.0, &mut rng);
    let w = Tensor::<f64>::randn(vec![3, 2, 3, 3], 1.0, &mut rng);
    let mut g = Graph::new();
    let (xv, wv) = (g.input(x.clone()).unwrap(), g.input(w.clone()).unwrap());
    let y = g.conv2d(xv, wv, None, (1, 1)).unwrap();
    assert_close(g.value(y).data(), &naive_conv2d(&x, &w, (1, 1)), 1e-6);
}

#[test]
fn depthwise_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::<f64>::randn(vec![2, 4, 8], 1.0, &mut rng);
    let w = Tensor::<f64>::randn(vec![4, 1, 7], 1.0, &mut rng);
    let mut g = Graph::new();
    let (xv, wv) = (g.input(x.clone()).unwrap(), g.input(w.clone()).unwrap());
    let y = g.conv1d_depthwise(xv, wv, None).unwrap();
    assert_close(g.value(y).data(), &naive_depthwise(&x, &w), 1e-6);
}

/// Per-head attention written with explicit loops.
fn naive_attention(x: &Tensor<f64>, heads: usize, w: [&Tensor<f64>; 4]) -> Vec<f64> {
    let (b, t, d) = (x.dim(0), x.dim(1), x.dim(2));
    let dh = d / heads;
    let proj = |m: &Tensor<f64>, src: &[f64]| -> Vec<f64> {
        (0..d).map(|o| (0..d).map(|i| m.at(&[o, i]) * src[i]).sum()).collect()
    };
    let mut out = vec![0.0; b * t * d];
    for bi in 0..b {
        let rows: Vec<&[f64]> = (0..t).map(|ti| &x.data()[(bi * t + ti) * d..(bi * t + ti + 1) * d]).collect();
        let q: Vec<Vec<f64>> = rows.iter().map(|r| proj(w[0], r)).collect();
        let k: Vec<Vec<f64>> = rows.iter().map(|r| proj(w[1], r)).collect();
        let v: Vec<Vec<f64>> = rows.iter().map(|r| proj(w[2], r)).collect();
        for ti in 0..t {
            let mut concat = vec![0.0; d];
            for h in 0..heads {
                let hs = h * dh..(h + 1) * dh;
                let logits: Vec<f64> = (0..t)
                    .map(|s| {
                        q[ti][hs.clone()].iter().zip(&k[s][hs.clone()]).map(|(a, b)| a * b).sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let max = logits.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                for s in 0..t {
                    let a = (logits[s] - max).exp() / z;
                    for (j, idx) in hs.clone().enumerate() {
                        concat[h * dh + j] += a * v[s][idx];
                    }
                }
            }
            let o = proj(w[3], &concat);
            out[(bi * t + ti) * d..(bi * t + ti + 1) * d].copy_from_slice(&o);
        }
    }
    out
}

#[test]
fn attention_matches_per_head_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::<f64>::randn(vec![1, 3, 4], 1.0, &mut rng);
    let ws: Vec<Tensor<f64>> = (0..4).map(|_| Tensor::randn(vec![4, 4], 0.7, &mut rng)).collect();
    let mut g = Graph::new();
    let xv = g.input(x.clone()).unwrap();
    let v: Vec<_> = ws.iter().map(|w| g.input(w.clone()).unwrap()).collect();
    let p = AttentionParams {
        wq: v[0],
        bq: None,
        wk: v[1],
        bk: None,
        wv: v[2],
        bv: None,
        wo: v[3],
        bo: None,
    };
    let (y, probs) = g.multi_head_attention_with_probs(xv, 2, &p).unwrap();
    assert_close(g.value(y).data(), &naive_attention(&x, 2, [&ws[0], &ws[1], &ws[2], &ws[3]]), 1e-6);
    for row in g.value(probs).data().chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn stride_then_upsample_keeps_even_indices() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::from_f64(vec![1, 1, 1, 4], &[1., 2., 3., 4.]).unwrap()).unwrap();
    let w = g.input(Tensor::ones(vec![1, 1, 1, 1])).unwrap();
    let down = g.conv2d(x, w, None, (1, 2)).unwrap();
    let down = g.reshape(down, &[1, 1, 2]).unwrap();
    let up = g.nearest_upsample_time(down, 2).unwrap();
    assert_eq!(g.value(up).data(), &[1., 1., 3., 3.]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv2d_oracle_on_small_shapes(
        b in 1usize..=2, cin in 1usize..=4, cout in 1usize..=4,
        f_half in 1usize..=4, t_half in 1usize..=4,
        k in prop::sample::select(vec![1usize, 3, 5]),
        sf in 1usize..=2, st in 1usize..=2, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::randn(vec![b, cin, 2 * f_half, 2 * t_half], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(vec![cout, cin, k, k], 1.0, &mut rng);
        let mut g = Graph::new();
        let (xv, wv) = (g.input(x.clone()).unwrap(), g.input(w.clone()).unwrap());
        let y = g.conv2d(xv, wv, None, (sf, st)).unwrap();
        prop_assert_eq!(g.shape(y), &[b, cout, 2 * f_half / sf, 2 * t_half / st]);
        let expect = naive_conv2d(&x, &w, (sf, st));
        for (a, e) in g.value(y).data().iter().zip(&expect) {
            prop_assert!((a - e).abs() < 1e-6);
        }
    }

    #[test]
    fn depthwise_oracle_on_small_shapes(
        b in 1usize..=2, c in 1usize..=4, t in 1usize..=8,
        k in prop::sample::select(vec![1usize, 3, 5, 7]), seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::randn(vec![b, c, t], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(vec![c, 1, k], 1.0, &mut rng);
        let mut g = Graph::new();
        let (xv, wv) = (g.input(x.clone()).unwrap(), g.input(w.clone()).unwrap());
        let y = g.conv1d_depthwise(xv, wv, None).unwrap();
        for (a, e) in g.value(y).data().iter().zip(&naive_depthwise(&x, &w)) {
            prop_assert!((a - e).abs() < 1e-6);
        }
    }

    #[test]
    fn upsample_has_exact_repeat_structure(
        d in 1usize..=3, t in 1usize..=6, k in 1usize..=4, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f32>::randn(vec![1, d, t], 1.0, &mut rng);
        let mut g = Graph::new();
        let xv = g.input(x.clone()).unwrap();
        let y = g.nearest_upsample_time(xv, k).unwrap();
        let out = g.value(y);
        for di in 0..d {
            for ti in 0..t * k {
                prop_assert_eq!(out.at(&[0, di, ti]), x.at(&[0, di, ti / k]));
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..=4, cols in 1usize..=9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::randn(vec![rows, cols], 5.0, &mut rng)).unwrap();
        let y = g.softmax(x, 1).unwrap();
        for row in g.value(y).data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
