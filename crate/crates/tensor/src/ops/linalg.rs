use crate::error::{Result, TensorError};
use crate::graph::{Graph, Op, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// (batch, rows, cols) of a rank-2 or rank-3 operand.
fn as_batched(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [r, c] => Some((1, r, c)),
        [b, r, c] => Some((b, r, c)),
        _ => None,
    }
}

pub(crate) fn matmul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    ta: bool,
    tb: bool,
    g: &Tensor<T>,
    want_a: bool,
    want_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (batch, ar, ac) = as_batched(a.shape()).expect("validated in forward");
    let (_, br, bc) = as_batched(b.shape()).expect("validated in forward");
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let n = if tb { br } else { bc };
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let ga = want_a.then(|| {
        let mut out = vec![T::zero(); ad.len()];
        for i in 0..batch {
            let (a_blk, b_blk, g_blk) = (&mut out[i * m * k..(i + 1) * m * k], &bd[i * k * n..(i + 1) * k * n], &gd[i * m * n..(i + 1) * m * n]);
            if ta {
                T::gemm(k, n, m, T::one(), b_blk, tb, g_blk, true, T::zero(), a_blk);
            } else {
                T::gemm(m, n, k, T::one(), g_blk, false, b_blk, !tb, T::zero(), a_blk);
            }
        }
        Tensor::from_parts(a.shape().to_vec(), out)
    });
    let gb = want_b.then(|| {
        let mut out = vec![T::zero(); bd.len()];
        for i in 0..batch {
            let (b_blk, a_blk, g_blk) = (&mut out[i * k * n..(i + 1) * k * n], &ad[i * m * k..(i + 1) * m * k], &gd[i * m * n..(i + 1) * m * n]);
            if tb {
                T::gemm(n, m, k, T::one(), g_blk, true, a_blk, ta, T::zero(), b_blk);
            } else {
                T::gemm(k, m, n, T::one(), a_blk, !ta, g_blk, false, T::zero(), b_blk);
            }
        }
        Tensor::from_parts(b.shape().to_vec(), out)
    });
    (ga, gb)
}

pub(crate) fn linear_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
    want_x: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (out_f, in_f) = (w.dim(0), w.dim(1));
    let rows = x.numel() / in_f;
    let gx = want_x.then(|| {
        let mut d = vec![T::zero(); x.numel()];
        T::gemm(rows, out_f, in_f, T::one(), g.data(), false, w.data(), false, T::zero(), &mut d);
        Tensor::from_parts(x.shape().to_vec(), d)
    });
    let mut gw = vec![T::zero(); w.numel()];
    T::gemm(out_f, rows, in_f, T::one(), g.data(), true, x.data(), false, T::zero(), &mut gw);
    let mut gb = vec![T::zero(); out_f];
    for row in g.data().chunks(out_f) {
        for (b, v) in gb.iter_mut().zip(row) {
            *b += *v;
        }
    }
    (
        gx,
        Tensor::from_parts(w.shape().to_vec(), gw),
        Tensor::from_parts(vec![out_f], gb),
    )
}

pub(crate) fn pointwise1d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
    want_x: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (batch, cin, t) = (x.dim(0), x.dim(1), x.dim(2));
    let cout = w.dim(0);
    let (xd, gd) = (x.data(), g.data());
    let gx = want_x.then(|| {
        let mut d = vec![T::zero(); x.numel()];
        for b in 0..batch {
            T::gemm(cin, cout, t, T::one(), w.data(), true, &gd[b * cout * t..(b + 1) * cout * t], false, T::zero(), &mut d[b * cin * t..(b + 1) * cin * t]);
        }
        Tensor::from_parts(x.shape().to_vec(), d)
    });
    let mut gw = vec![T::zero(); w.numel()];
    let mut gb = vec![T::zero(); cout];
    for b in 0..batch {
        let g_blk = &gd[b * cout * t..(b + 1) * cout * t];
        T::gemm(cout, t, cin, T::one(), g_blk, false, &xd[b * cin * t..(b + 1) * cin * t], true, T::one(), &mut gw);
        for (c, acc) in gb.iter_mut().enumerate() {
            *acc += g_blk[c * t..(c + 1) * t].iter().copied().sum::<T>();
        }
    }
    (
        gx,
        Tensor::from_parts(w.shape().to_vec(), gw),
        Tensor::from_parts(vec![cout], gb),
    )
}

fn check_bias<T: Real>(g: &Graph<T>, op: &'static str, bias: Option<Var>, n: usize) -> Result<()> {
    if let Some(b) = bias {
        if g.shape(b) != [n] {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: g.shape(b).to_vec(),
                rhs: vec![n],
            });
        }
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    /// `op(lhs) @ op(rhs)` for rank-2 operands, or batched over a leading
    /// axis for rank-3 operands. `trans_*` transposes the last two axes.
    pub fn matmul(&mut self, lhs: Var, rhs: Var, trans_lhs: bool, trans_rhs: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(lhs).to_vec(), self.shape(rhs).to_vec());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != sb.len() {
            return Err(mismatch());
        }
        let (batch, ar, ac) = as_batched(&sa).ok_or_else(mismatch)?;
        let (bb, br, bc) = as_batched(&sb).ok_or_else(mismatch)?;
        let (m, k) = if trans_lhs { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if trans_rhs { (bc, br) } else { (br, bc) };
        if batch != bb || k != k2 {
            return Err(mismatch());
        }
        let (ad, bd) = (self.value(lhs).data(), self.value(rhs).data());
        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                &ad[i * m * k..(i + 1) * m * k],
                trans_lhs,
                &bd[i * k * n..(i + 1) * k * n],
                trans_rhs,
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        self.add_macs(batch * m * k * n);
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        self.push(
            "matmul",
            Tensor::from_parts(shape, out),
            Op::MatMul {
                lhs,
                rhs,
                trans_lhs,
                trans_rhs,
            },
        )
    }

    /// `x @ weight^T + bias` over the last axis; `weight` is `[out, in]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(weight).to_vec());
        if sw.len() != 2 || sx.last() != Some(&sw[1]) {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: sx,
                rhs: sw,
            });
        }
        let (out_f, in_f) = (sw[0], sw[1]);
        check_bias(self, "linear", bias, out_f)?;
        let rows = self.value(x).numel() / in_f;
        let mut out = vec![T::zero(); rows * out_f];
        T::gemm(rows, in_f, out_f, T::one(), self.value(x).data(), false, self.value(weight).data(), true, T::zero(), &mut out);
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for row in out.chunks_mut(out_f) {
                for (o, v) in row.iter_mut().zip(bd) {
                    *o += *v;
                }
            }
        }
        self.add_macs(rows * in_f * out_f);
        let mut shape = sx;
        *shape.last_mut().expect("rank >= 1") = out_f;
        self.push("linear", Tensor::from_parts(shape, out), Op::Linear { x, weight, bias })
    }

    /// Kernel-size-1 convolution over `[B, Cin, T]` with `weight` `[Cout, Cin]`.
    pub fn pointwise_conv1d(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(weight).to_vec());
        if sx.len() != 3 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(TensorError::ShapeMismatch {
                op: "pointwise_conv1d",
                lhs: sx,
                rhs: sw,
            });
        }
        let (batch, cin, t) = (sx[0], sx[1], sx[2]);
        let cout = sw[0];
        check_bias(self, "pointwise_conv1d", bias, cout)?;
        let (xd, wd) = (self.value(x).data(), self.value(weight).data());
        let mut out = vec![T::zero(); batch * cout * t];
        for b in 0..batch {
            T::gemm(cout, cin, t, T::one(), wd, false, &xd[b * cin * t..(b + 1) * cin * t], false, T::zero(), &mut out[b * cout * t..(b + 1) * cout * t]);
        }
        if let Some(bv) = bias {
            let bd = self.value(bv).data();
            for blk in out.chunks_mut(cout * t) {
                for (c, row) in blk.chunks_mut(t).enumerate() {
                    row.iter_mut().for_each(|v| *v += bd[c]);
                }
            }
        }
        self.add_macs(batch * cout * cin * t);
        self.push(
            "pointwise_conv1d",
            Tensor::from_parts(vec![batch, cout, t], out),
            Op::Pointwise1d { x, weight, bias },
        )
    }
}
