use crate::error::{Result, TensorError};
use crate::graph::{Graph, Op, Var};
use crate::real::Real;
use crate::tensor::{split_axis, Tensor};

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::AxisOutOfRange {
            op,
            axis,
            rank: shape.len(),
        });
    }
    Ok(())
}

/// Output shape of a reduction over `axis`.
fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut out = shape.to_vec();
    if keepdim || shape.len() == 1 {
        out[axis] = 1;
    } else {
        out.remove(axis);
    }
    out
}

pub(crate) fn sum_axis_backward<T: Real>(x_shape: &[usize], axis: usize, g: &Tensor<T>) -> Tensor<T> {
    let (outer, len, inner) = split_axis(x_shape, axis);
    let gd = g.data();
    let mut data = vec![T::zero(); outer * len * inner];
    for o in 0..outer {
        for i in 0..len {
            let dst = &mut data[(o * len + i) * inner..(o * len + i + 1) * inner];
            dst.copy_from_slice(&gd[o * inner..(o + 1) * inner]);
        }
    }
    Tensor::from_parts(x_shape.to_vec(), data)
}

fn softmax_in_place<T: Real>(data: &mut [T], shape: &[usize], axis: usize, log: bool) {
    let (outer, len, inner) = split_axis(shape, axis);
    for o in 0..outer {
        for j in 0..inner {
            let at = |i: usize| (o * len + i) * inner + j;
            let mut max = T::neg_infinity();
            for i in 0..len {
                max = max.max(data[at(i)]);
            }
            let mut sum = T::zero();
            for i in 0..len {
                sum += (data[at(i)] - max).exp();
            }
            if log {
                let lse = max + sum.ln();
                for i in 0..len {
                    data[at(i)] = data[at(i)] - lse;
                }
            } else {
                for i in 0..len {
                    data[at(i)] = (data[at(i)] - max).exp() / sum;
                }
            }
        }
    }
}

pub(crate) fn softmax_backward<T: Real>(y: &Tensor<T>, axis: usize, g: &Tensor<T>) -> Tensor<T> {
    let (outer, len, inner) = split_axis(y.shape(), axis);
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for j in 0..inner {
            let at = |i: usize| (o * len + i) * inner + j;
            let dot: T = (0..len).map(|i| yd[at(i)] * gd[at(i)]).sum();
            for i in 0..len {
                out[at(i)] = yd[at(i)] * (gd[at(i)] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}

pub(crate) fn log_softmax_backward<T: Real>(y: &Tensor<T>, axis: usize, g: &Tensor<T>) -> Tensor<T> {
    let (outer, len, inner) = split_axis(y.shape(), axis);
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for j in 0..inner {
            let at = |i: usize| (o * len + i) * inner + j;
            let total: T = (0..len).map(|i| gd[at(i)]).sum();
            for i in 0..len {
                out[at(i)] = gd[at(i)] - yd[at(i)].exp() * total;
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}

impl<T: Real> Graph<T> {
    /// Sum of every element, shape `[1]`.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let s = self.sum_all(x)?;
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Sum over `axis`. Without `keepdim` the axis is dropped (a rank-1
    /// input keeps a length-1 axis).
    pub fn sum_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("sum_axis", &shape, axis)?;
        let (outer, len, inner) = split_axis(&shape, axis);
        let xd = self.value(x).data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..len {
                let src = &xd[(o * len + i) * inner..(o * len + i + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += *s;
                }
            }
        }
        let out = Tensor::from_parts(reduced_shape(&shape, axis, keepdim), data);
        self.push("sum_axis", out, Op::SumAxis { x, axis })
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("mean_axis", &shape, axis)?;
        let n = shape[axis];
        let s = self.sum_axis(x, axis, keepdim)?;
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Population standard deviation over `axis`: `sqrt(mean((x - mean)^2) + eps)`.
    pub fn std_axis(&mut self, x: Var, axis: usize, keepdim: bool, eps: T) -> Result<Var> {
        let mean = self.mean_axis(x, axis, true)?;
        let centered = self.sub(x, mean)?;
        let sq = self.square(centered)?;
        let var = self.mean_axis(sq, axis, keepdim)?;
        let var = self.add_scalar(var, eps)?;
        self.sqrt(var)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("softmax", &shape, axis)?;
        let mut data = self.value(x).data().to_vec();
        softmax_in_place(&mut data, &shape, axis, false);
        self.push("softmax", Tensor::from_parts(shape, data), Op::Softmax { x, axis })
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("log_softmax", &shape, axis)?;
        let mut data = self.value(x).data().to_vec();
        softmax_in_place(&mut data, &shape, axis, true);
        self.push(
            "log_softmax",
            Tensor::from_parts(shape, data),
            Op::LogSoftmax { x, axis },
        )
    }
}
