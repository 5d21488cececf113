use crate::error::{contract, Result, TensorError};
use crate::graph::{Graph, Op, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// Running statistics of a batch-norm layer, one entry per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormOptions<T> {
    pub train: bool,
    pub momentum: T,
    pub eps: T,
}

impl<T: Real> BatchNormOptions<T> {
    pub fn train() -> Self {
        Self {
            train: true,
            momentum: T::lit(0.1),
            eps: T::lit(1e-5),
        }
    }

    pub fn eval() -> Self {
        Self {
            train: false,
            ..Self::train()
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BatchNormCache<T> {
    xhat: Vec<T>,
    invstd: Vec<T>,
    train: bool,
}

#[derive(Clone, Debug)]
pub(crate) struct LayerNormCache<T> {
    xhat: Vec<T>,
    invstd: Vec<T>,
}

pub(crate) fn batch_norm_backward<T: Real>(
    shape: &[usize],
    gamma: &Tensor<T>,
    cache: &BatchNormCache<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (batch, c) = (shape[0], shape[1]);
    let spatial: usize = shape[2..].iter().product();
    let n = T::lit((batch * spatial) as f64);
    let gd = g.data();
    let mut gx = vec![T::zero(); gd.len()];
    let mut ggamma = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    let idx = |b: usize, ch: usize| (b * c + ch) * spatial;
    for ch in 0..c {
        let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
        for b in 0..batch {
            let at = idx(b, ch);
            for s in 0..spatial {
                sum_g += gd[at + s];
                sum_gx += gd[at + s] * cache.xhat[at + s];
            }
        }
        ggamma[ch] = sum_gx;
        gbeta[ch] = sum_g;
        let scale = gamma.data()[ch] * cache.invstd[ch];
        for b in 0..batch {
            let at = idx(b, ch);
            for s in 0..spatial {
                gx[at + s] = if cache.train {
                    scale * (gd[at + s] - (sum_g + cache.xhat[at + s] * sum_gx) / n)
                } else {
                    scale * gd[at + s]
                };
            }
        }
    }
    (
        Tensor::from_parts(shape.to_vec(), gx),
        Tensor::from_parts(vec![c], ggamma),
        Tensor::from_parts(vec![c], gbeta),
    )
}

pub(crate) fn layer_norm_backward<T: Real>(
    gamma: &Tensor<T>,
    cache: &LayerNormCache<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = gamma.numel();
    let gd = g.data();
    let gam = gamma.data();
    let mut gx = vec![T::zero(); gd.len()];
    let mut ggamma = vec![T::zero(); d];
    let mut gbeta = vec![T::zero(); d];
    let n = T::lit(d as f64);
    for (r, &inv) in cache.invstd.iter().enumerate() {
        let row = r * d..(r + 1) * d;
        let (grow, xrow) = (&gd[row.clone()], &cache.xhat[row.clone()]);
        let (mut s1, mut s2) = (T::zero(), T::zero());
        for i in 0..d {
            let dxhat = grow[i] * gam[i];
            s1 += dxhat;
            s2 += dxhat * xrow[i];
            ggamma[i] += grow[i] * xrow[i];
            gbeta[i] += grow[i];
        }
        for (i, out) in gx[row].iter_mut().enumerate() {
            let dxhat = grow[i] * gam[i];
            *out = inv * (dxhat - (s1 + xrow[i] * s2) / n);
        }
    }
    (
        Tensor::from_parts(g.shape().to_vec(), gx),
        Tensor::from_parts(vec![d], ggamma),
        Tensor::from_parts(vec![d], gbeta),
    )
}

fn check_affine<T: Real>(g: &Graph<T>, op: &'static str, v: Var, n: usize) -> Result<()> {
    if g.shape(v) != [n] {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: g.shape(v).to_vec(),
            rhs: vec![n],
        });
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    /// Batch normalization over every axis except axis 1 of `x`
    /// `[B, C, ...]`. In training mode batch statistics normalize the input
    /// and `stats` is updated with momentum; in eval mode `stats` is used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats<T>,
        opts: BatchNormOptions<T>,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(contract("batch_norm", format!("need [B, C, ...], got {shape:?}")));
        }
        let (batch, c) = (shape[0], shape[1]);
        check_affine(self, "batch_norm", gamma, c)?;
        check_affine(self, "batch_norm", beta, c)?;
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                lhs: vec![stats.mean.len()],
                rhs: vec![c],
            });
        }
        let spatial: usize = shape[2..].iter().product();
        let count = batch * spatial;
        let xd = self.value(x).data();
        let (gam, bet) = (self.value(gamma).data(), self.value(beta).data());
        let idx = |b: usize, ch: usize| (b * c + ch) * spatial;
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        let mut invstd = vec![T::zero(); c];
        for ch in 0..c {
            let (mean, var) = if opts.train {
                let mut sum = T::zero();
                for b in 0..batch {
                    sum += xd[idx(b, ch)..idx(b, ch) + spatial].iter().copied().sum::<T>();
                }
                let mean = sum / T::lit(count as f64);
                let mut sq = T::zero();
                for b in 0..batch {
                    for &v in &xd[idx(b, ch)..idx(b, ch) + spatial] {
                        sq += (v - mean) * (v - mean);
                    }
                }
                let var = sq / T::lit(count as f64);
                let unbiased = if count > 1 {
                    sq / T::lit((count - 1) as f64)
                } else {
                    var
                };
                let m = opts.momentum;
                stats.mean[ch] = (T::one() - m) * stats.mean[ch] + m * mean;
                stats.var[ch] = (T::one() - m) * stats.var[ch] + m * unbiased;
                (mean, var)
            } else {
                (stats.mean[ch], stats.var[ch])
            };
            let inv = T::one() / (var + opts.eps).sqrt();
            invstd[ch] = inv;
            for b in 0..batch {
                let at = idx(b, ch);
                for s in 0..spatial {
                    let h = (xd[at + s] - mean) * inv;
                    xhat[at + s] = h;
                    out[at + s] = gam[ch] * h + bet[ch];
                }
            }
        }
        let cache = BatchNormCache {
            xhat,
            invstd,
            train: opts.train,
        };
        self.push(
            "batch_norm",
            Tensor::from_parts(shape, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            },
        )
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("rank >= 1");
        check_affine(self, "layer_norm", gamma, d)?;
        check_affine(self, "layer_norm", beta, d)?;
        let xd = self.value(x).data();
        let (gam, bet) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xd.len() / d;
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        let mut invstd = vec![T::zero(); rows];
        let n = T::lit(d as f64);
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            invstd[r] = inv;
            for i in 0..d {
                let h = (row[i] - mean) * inv;
                xhat[r * d + i] = h;
                out[r * d + i] = gam[i] * h + bet[i];
            }
        }
        self.push(
            "layer_norm",
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache: LayerNormCache { xhat, invstd },
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_norm_standardizes_rows() {
        let mut g = Graph::<f64>::new();
        let x = g
            .input(Tensor::from_f64(vec![2, 4], &[1., 5., -2., 9., 0.3, 0.1, 0.7, -0.4]).unwrap())
            .unwrap();
        let gamma = g.input(Tensor::ones(vec![4])).unwrap();
        let beta = g.input(Tensor::zeros(vec![4])).unwrap();
        let y = g.layer_norm(x, gamma, beta, 1e-12).unwrap();
        for row in g.value(y).data().chunks(4) {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_norm_updates_running_stats_only_in_train_mode() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_f64(vec![2, 1, 2], &[1., 3., 5., 7.]).unwrap()).unwrap();
        let gamma = g.param(Tensor::ones(vec![1])).unwrap();
        let beta = g.param(Tensor::zeros(vec![1])).unwrap();
        let mut stats = BatchNormStats::new(1);
        g.batch_norm(x, gamma, beta, &mut stats, BatchNormOptions::train()).unwrap();
        // mean 4, unbiased var 20/3
        assert!((stats.mean[0] - 0.4).abs() < 1e-12);
        assert!((stats.var[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
        let before = stats.clone();
        let y = g.batch_norm(x, gamma, beta, &mut stats, BatchNormOptions::eval()).unwrap();
        assert_eq!(stats, before);
        let inv = 1.0 / (before.var[0] + 1e-5f64).sqrt();
        assert!((g.value(y).data()[0] - (1.0 - 0.4) * inv).abs() < 1e-12);
    }
}
