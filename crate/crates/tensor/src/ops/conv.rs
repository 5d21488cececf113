//! Same-padded convolutions. Kernels are odd so symmetric zero padding of
//! `(k - 1) / 2` keeps output extents at exactly `input / stride`.

use crate::error::{contract, Result, TensorError};
use crate::graph::{Graph, Op, Var};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct Conv2dGeom {
    cin: usize,
    f: usize,
    t: usize,
    kf: usize,
    kt: usize,
    sf: usize,
    st: usize,
    fo: usize,
    to: usize,
}

impl Conv2dGeom {
    fn col_rows(&self) -> usize {
        self.cin * self.kf * self.kt
    }

    fn col_cols(&self) -> usize {
        self.fo * self.to
    }
}

/// Unfolds one `[Cin, F, T]` image into a `[Cin*Kf*Kt, Fo*To]` matrix.
fn im2col<T: Real>(x: &[T], g: Conv2dGeom, cols: &mut [T]) {
    let (pf, pt) = ((g.kf - 1) / 2, (g.kt - 1) / 2);
    let width = g.col_cols();
    let mut row = 0;
    for ci in 0..g.cin {
        let plane = &x[ci * g.f * g.t..(ci + 1) * g.f * g.t];
        for kf in 0..g.kf {
            for kt in 0..g.kt {
                let dst = &mut cols[row * width..(row + 1) * width];
                for fo in 0..g.fo {
                    let fi = (fo * g.sf + kf) as isize - pf as isize;
                    let seg = &mut dst[fo * g.to..(fo + 1) * g.to];
                    if fi < 0 || fi >= g.f as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[fi as usize * g.t..(fi as usize + 1) * g.t];
                    for (to, d) in seg.iter_mut().enumerate() {
                        let ti = (to * g.st + kt) as isize - pt as isize;
                        *d = if ti < 0 || ti >= g.t as isize {
                            T::zero()
                        } else {
                            src[ti as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into the image.
fn col2im<T: Real>(cols: &[T], g: Conv2dGeom, x: &mut [T]) {
    let (pf, pt) = ((g.kf - 1) / 2, (g.kt - 1) / 2);
    let width = g.col_cols();
    let mut row = 0;
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.f * g.t..(ci + 1) * g.f * g.t];
        for kf in 0..g.kf {
            for kt in 0..g.kt {
                let src = &cols[row * width..(row + 1) * width];
                for fo in 0..g.fo {
                    let fi = (fo * g.sf + kf) as isize - pf as isize;
                    if fi < 0 || fi >= g.f as isize {
                        continue;
                    }
                    let dst = &mut plane[fi as usize * g.t..(fi as usize + 1) * g.t];
                    for (to, s) in src[fo * g.to..(fo + 1) * g.to].iter().enumerate() {
                        let ti = (to * g.st + kt) as isize - pt as isize;
                        if ti >= 0 && ti < g.t as isize {
                            dst[ti as usize] += *s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn geometry(x: &[usize], w: &[usize], stride: (usize, usize)) -> Conv2dGeom {
    Conv2dGeom {
        cin: x[1],
        f: x[2],
        t: x[3],
        kf: w[2],
        kt: w[3],
        sf: stride.0,
        st: stride.1,
        fo: x[2] / stride.0,
        to: x[3] / stride.1,
    }
}

pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: (usize, usize),
    g: &Tensor<T>,
    want_x: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let geom = geometry(x.shape(), w.shape(), stride);
    let (batch, cout) = (x.dim(0), w.dim(0));
    let (rows, width) = (geom.col_rows(), geom.col_cols());
    let in_sz = geom.cin * geom.f * geom.t;
    let mut cols = vec![T::zero(); rows * width];
    let mut dcols = vec![T::zero(); rows * width];
    let mut gw = vec![T::zero(); w.numel()];
    let mut gb = vec![T::zero(); cout];
    let mut gx = want_x.then(|| vec![T::zero(); x.numel()]);
    for b in 0..batch {
        let g_blk = &g.data()[b * cout * width..(b + 1) * cout * width];
        im2col(&x.data()[b * in_sz..(b + 1) * in_sz], geom, &mut cols);
        T::gemm(cout, width, rows, T::one(), g_blk, false, &cols, true, T::one(), &mut gw);
        for (c, acc) in gb.iter_mut().enumerate() {
            *acc += g_blk[c * width..(c + 1) * width].iter().copied().sum::<T>();
        }
        if let Some(gx) = gx.as_mut() {
            T::gemm(rows, cout, width, T::one(), w.data(), true, g_blk, false, T::zero(), &mut dcols);
            col2im(&dcols, geom, &mut gx[b * in_sz..(b + 1) * in_sz]);
        }
    }
    (
        gx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
        Tensor::from_parts(w.shape().to_vec(), gw),
        Tensor::from_parts(vec![cout], gb),
    )
}

pub(crate) fn depthwise1d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (batch, c, t) = (x.dim(0), x.dim(1), x.dim(2));
    let k = w.dim(2);
    let pad = (k - 1) / 2;
    let (xd, wd, gd) = (x.data(), w.data(), g.data());
    let mut gx = vec![T::zero(); xd.len()];
    let mut gw = vec![T::zero(); wd.len()];
    let mut gb = vec![T::zero(); c];
    for b in 0..batch {
        for ch in 0..c {
            let base = (b * c + ch) * t;
            let kernel = &wd[ch * k..(ch + 1) * k];
            for ti in 0..t {
                let go = gd[base + ti];
                gb[ch] += go;
                for (kk, &wv) in kernel.iter().enumerate() {
                    let src = ti as isize + kk as isize - pad as isize;
                    if src >= 0 && (src as usize) < t {
                        gx[base + src as usize] += go * wv;
                        gw[ch * k + kk] += go * xd[base + src as usize];
                    }
                }
            }
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), gx),
        Tensor::from_parts(w.shape().to_vec(), gw),
        Tensor::from_parts(vec![c], gb),
    )
}

impl<T: Real> Graph<T> {
    /// 2D convolution of `x` `[B, Cin, F, T]` with `weight`
    /// `[Cout, Cin, Kf, Kt]`, symmetric zero "same" padding and
    /// `stride = (Sf, St)`. Output is `[B, Cout, F/Sf, T/St]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: (usize, usize)) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(weight).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: sx,
                rhs: sw,
            });
        }
        if sw[2] % 2 == 0 || sw[3] % 2 == 0 {
            return Err(contract("conv2d", format!("kernel {:?} must be odd", &sw[2..])));
        }
        if stride.0 == 0 || stride.1 == 0 || sx[2] % stride.0 != 0 || sx[3] % stride.1 != 0 {
            return Err(contract(
                "conv2d",
                format!("input {sx:?} not divisible by stride {stride:?}"),
            ));
        }
        let cout = sw[0];
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    lhs: self.shape(b).to_vec(),
                    rhs: vec![cout],
                });
            }
        }
        let geom = geometry(&sx, &sw, stride);
        let batch = sx[0];
        let (rows, width) = (geom.col_rows(), geom.col_cols());
        let in_sz = geom.cin * geom.f * geom.t;
        let mut cols = vec![T::zero(); rows * width];
        let mut out = vec![T::zero(); batch * cout * width];
        {
            let xd = self.value(x).data();
            let wd = self.value(weight).data();
            for b in 0..batch {
                im2col(&xd[b * in_sz..(b + 1) * in_sz], geom, &mut cols);
                T::gemm(cout, rows, width, T::one(), wd, false, &cols, false, T::zero(), &mut out[b * cout * width..(b + 1) * cout * width]);
            }
        }
        if let Some(bv) = bias {
            let bd = self.value(bv).data();
            for blk in out.chunks_mut(cout * width) {
                for (c, plane) in blk.chunks_mut(width).enumerate() {
                    plane.iter_mut().for_each(|v| *v += bd[c]);
                }
            }
        }
        self.add_macs(batch * cout * rows * width);
        self.push(
            "conv2d",
            Tensor::from_parts(vec![batch, cout, geom.fo, geom.to], out),
            Op::Conv2d {
                x,
                weight,
                bias,
                stride,
            },
        )
    }

    /// Depthwise temporal convolution of `x` `[B, C, T]` with `weight`
    /// `[C, 1, K]` (K odd), same padding.
    pub fn conv1d_depthwise(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(weight).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sw[0] != sx[1] || sw[1] != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d_depthwise",
                lhs: sx,
                rhs: sw,
            });
        }
        let k = sw[2];
        if k % 2 == 0 {
            return Err(contract("conv1d_depthwise", format!("kernel size {k} must be odd")));
        }
        let (batch, c, t) = (sx[0], sx[1], sx[2]);
        if let Some(b) = bias {
            if self.shape(b) != [c] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv1d_depthwise",
                    lhs: self.shape(b).to_vec(),
                    rhs: vec![c],
                });
            }
        }
        let pad = (k - 1) / 2;
        let xd = self.value(x).data();
        let wd = self.value(weight).data();
        let bd = bias.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * t;
                let kernel = &wd[ch * k..(ch + 1) * k];
                let row = &xd[base..base + t];
                let init = bd.map_or(T::zero(), |bd| bd[ch]);
                for (ti, o) in out[base..base + t].iter_mut().enumerate() {
                    let mut acc = init;
                    for (kk, &wv) in kernel.iter().enumerate() {
                        let src = ti as isize + kk as isize - pad as isize;
                        if src >= 0 && (src as usize) < t {
                            acc += wv * row[src as usize];
                        }
                    }
                    *o = acc;
                }
            }
        }
        self.add_macs(batch * c * k * t);
        self.push(
            "conv1d_depthwise",
            Tensor::from_parts(sx, out),
            Op::Depthwise1d { x, weight, bias },
        )
    }
}
