use crate::error::{contract, Result, TensorError};
use crate::graph::{Graph, Op, Var};
use crate::real::Real;
use crate::tensor::{numel, row_major_strides, split_axis, Tensor};

fn permute_data<T: Real>(src: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let in_shape = src.shape();
    let in_strides = row_major_strides(in_shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = out_shape.len();
    let sd = src.data();
    let mut out = Vec::with_capacity(sd.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..sd.len() {
        out.push(sd[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Tensor::from_parts(out_shape, out)
}

pub(crate) fn permute_backward<T: Real>(axes: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let mut inverse = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inverse[a] = i;
    }
    permute_data(g, &inverse)
}

pub(crate) fn narrow_backward<T: Real>(x_shape: &[usize], axis: usize, start: usize, g: &Tensor<T>) -> Tensor<T> {
    let (outer, len, inner) = split_axis(x_shape, axis);
    let width = g.shape()[axis];
    let gd = g.data();
    let mut out = vec![T::zero(); outer * len * inner];
    for o in 0..outer {
        let dst = (o * len + start) * inner;
        out[dst..dst + width * inner].copy_from_slice(&gd[o * width * inner..(o + 1) * width * inner]);
    }
    Tensor::from_parts(x_shape.to_vec(), out)
}

pub(crate) fn concat_backward<T: Real>(shapes: &[&[usize]], axis: usize, g: &Tensor<T>) -> Vec<Tensor<T>> {
    let (outer, total, inner) = split_axis(g.shape(), axis);
    let gd = g.data();
    let mut start = 0;
    shapes
        .iter()
        .map(|shape| {
            let width = shape[axis];
            let mut out = Vec::with_capacity(numel(shape));
            for o in 0..outer {
                let from = (o * total + start) * inner;
                out.extend_from_slice(&gd[from..from + width * inner]);
            }
            start += width;
            Tensor::from_parts(shape.to_vec(), out)
        })
        .collect()
}

/// Adjoint of nearest-neighbour repetition: sums each group of `factor`.
pub(crate) fn upsample_time_backward<T: Real>(factor: usize, g: &Tensor<T>) -> Tensor<T> {
    let mut shape = g.shape().to_vec();
    let last = shape.len() - 1;
    shape[last] /= factor;
    let data = g.data().chunks(factor).map(|c| c.iter().copied().sum()).collect();
    Tensor::from_parts(shape, data)
}

impl<T: Real> Graph<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape(x))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let rank = self.shape(x).len();
        let mut seen = vec![false; rank];
        for &a in axes {
            if a >= rank || std::mem::replace(&mut seen[a], true) {
                return Err(contract("permute", format!("{axes:?} is not a permutation of 0..{rank}")));
            }
        }
        if axes.len() != rank {
            return Err(contract("permute", format!("{axes:?} is not a permutation of 0..{rank}")));
        }
        let value = permute_data(self.value(x), axes);
        self.push(
            "permute",
            value,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
        )
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank < 2 {
            return Err(contract("transpose", "rank must be at least 2"));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(x, &axes)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "narrow",
                axis,
                rank: shape.len(),
            });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(contract(
                "narrow",
                format!("range {start}..{} outside axis of length {}", start + len, shape[axis]),
            ));
        }
        let (outer, total, inner) = split_axis(&shape, axis);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * total + start) * inner;
            out.extend_from_slice(&xd[from..from + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.push(
            "narrow",
            Tensor::from_parts(out_shape, out),
            Op::Narrow { x, axis, start },
        )
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| contract("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "concat",
                axis,
                rank: base.len(),
            });
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let w = self.shape(v)[axis];
                out.extend_from_slice(&self.value(v).data()[o * w * inner..(o + 1) * w * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(
            "concat",
            Tensor::from_parts(shape, out),
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        )
    }

    /// Nearest-neighbour upsampling of the last (time) axis: each step is
    /// repeated `factor` times, so `out[.., t] == x[.., t / factor]`.
    pub fn nearest_upsample_time(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(contract("nearest_upsample_time", "factor must be at least 1"));
        }
        let mut shape = self.shape(x).to_vec();
        let data: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, factor))
            .collect();
        *shape.last_mut().expect("rank >= 1") *= factor;
        self.push(
            "nearest_upsample_time",
            Tensor::from_parts(shape, data),
            Op::UpsampleTime { x, factor },
        )
    }
}
