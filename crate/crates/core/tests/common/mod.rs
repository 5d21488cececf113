//! Direct-loop reference implementations shared by the integration tests.
#![allow(dead_code)]

use redim_tensor::Tensor;
use redimnet2::config::FFN_EXPANSION;
use redimnet2::{ModelConfig, ShapePlan};

pub fn assert_close(a: &[f64], b: &[f64], tol: f64) -> Result<(), String> {
    if a.len() != b.len() {
        return Err(format!("lengths {} and {}", a.len(), b.len()));
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if !((x - y).abs() <= tol) {
            return Err(format!("index {i}: {x} vs {y}"));
        }
    }
    Ok(())
}

/// Zero-padded ("same") convolution of `[B, Cin, F, T]` by `[Cout, Cin, Kf, Kt]`.
pub fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, stride: (usize, usize)) -> Vec<f64> {
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

/// Zero-padded depthwise convolution of `[B, C, T]` by `[C, 1, K]`.
pub fn naive_depthwise(x: &Tensor<f64>, w: &Tensor<f64>) -> Vec<f64> {
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

/// Bias-free multi-head attention over `[B, T, D]` with weights `[q, k, v, o]`.
pub fn naive_attention(x: &Tensor<f64>, heads: usize, w: [&Tensor<f64>; 4]) -> Vec<f64> {
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

/// Attention-weighted mean and standard deviation of `x` `[B, D, T]`
/// with scores `v . tanh(W x_t + b)`; returns `[B, 2D]` row-major.
pub fn naive_asp(x: &Tensor<f64>, w: &Tensor<f64>, bias: &[f64], v: &[f64], eps: f64) -> Vec<f64> {
    let (b, d, t) = (x.dim(0), x.dim(1), x.dim(2));
    let h = w.dim(0);
    let mut out = Vec::with_capacity(b * 2 * d);
    for bi in 0..b {
        let e: Vec<f64> = (0..t)
            .map(|ti| {
                (0..h)
                    .map(|j| {
                        let z: f64 = (0..d).map(|k| w.at(&[j, k]) * x.at(&[bi, k, ti])).sum::<f64>() + bias[j];
                        v[j] * z.tanh()
                    })
                    .sum()
            })
            .collect();
        let max = e.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = e.iter().map(|s| (s - max).exp()).sum();
        let alpha: Vec<f64> = e.iter().map(|s| (s - max).exp() / z).collect();
        let mut mu = vec![0.0; d];
        let mut sd = vec![0.0; d];
        for k in 0..d {
            mu[k] = (0..t).map(|ti| alpha[ti] * x.at(&[bi, k, ti])).sum();
            let var: f64 = (0..t).map(|ti| alpha[ti] * (x.at(&[bi, k, ti]) - mu[k]).powi(2)).sum();
            sd[k] = (var + eps).sqrt();
        }
        out.extend(mu);
        out.extend(sd);
    }
    out
}

/// EER as the smallest `max(FAR, FRR)` over every threshold, by brute force.
pub fn brute_force_eer(labels: &[bool], scores: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.push(f64::INFINITY);
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    thresholds
        .iter()
        .map(|&t| {
            let fa = labels.iter().zip(scores).filter(|(&l, &s)| !l && s >= t).count() as f64 / n_neg;
            let fr = labels.iter().zip(scores).filter(|(&l, &s)| l && s < t).count() as f64 / n_pos;
            fa.max(fr)
        })
        .fold(f64::INFINITY, f64::min)
}

/// MACs of one forward pass of `cfg` over `t` frames (already divisible
/// by the time divisor), found by walking every multiply of the layer loops.
pub fn enumerate_macs(cfg: &ModelConfig, t: usize) -> u64 {
    let mut n = 0u64;
    let mut conv = |cout: usize, cin_per_group: usize, k: (usize, usize), out: (usize, usize)| {
        for _co in 0..cout {
            for _i in 0..out.0 {
                for _j in 0..out.1 {
                    for _ci in 0..cin_per_group {
                        for _a in 0..k.0 {
                            for _b in 0..k.1 {
                                n += 1;
                            }
                        }
                    }
                }
            }
        }
    };
    let plan = ShapePlan::new(cfg, t).unwrap();
    let d = cfg.width();
    conv(cfg.c0, 1, (3, 3), (cfg.f0, t));
    let mut linears: Vec<(usize, usize, usize)> = Vec::new();
    let mut scores = 0u64;
    for st in &plan.stages {
        for _ in 0..st.spec.blocks_2d {
            conv(st.input.c, st.input.c, (3, 3), (st.input.f, st.input.t));
            conv(st.input.c, st.input.c, (3, 3), (st.input.f, st.input.t));
        }
        conv(st.output.c, st.input.c, (3, 3), (st.output.f, st.output.t));
        let tt = st.output.t;
        for _ in 0..st.spec.blocks_1d {
            conv(d, 1, (1, cfg.kernel_1d), (1, tt));
            linears.push((d, FFN_EXPANSION * d, tt));
            linears.push((FFN_EXPANSION * d, d, tt));
            for _ in 0..4 {
                linears.push((d, d, tt));
            }
            for _ in 0..2 {
                for _i in 0..tt {
                    for _j in 0..tt {
                        scores += d as u64;
                    }
                }
            }
        }
    }
    linears.push((d, cfg.asp_hidden, t));
    linears.push((cfg.asp_hidden, 1, t));
    linears.push((2 * d, cfg.embed_dim, 1));
    for (i, o, p) in linears {
        for _ in 0..p {
            for _ in 0..o {
                for _ in 0..i {
                    n += 1;
                }
            }
        }
    }
    n + scores
}
