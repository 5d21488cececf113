use crate::error::{Result, TensorError};
use crate::graph::{Graph, Op, Var};
use crate::real::Real;
use crate::tensor::{numel, row_major_strides, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryKind<T> {
    Relu,
    /// tanh approximation of GELU.
    Gelu,
    Tanh,
    Exp,
    Log,
    Sqrt,
    Softplus,
    ClampMin(T),
    Scale(T),
    AddScalar(T),
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let dim = |s: &[usize], i: usize| {
        if i + s.len() >= rank {
            s[i + s.len() - rank]
        } else {
            1
        }
    };
    (0..rank)
        .map(|i| match (dim(a, i), dim(b, i)) {
            (x, y) if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

/// Strides of `shape` viewed through the broadcast `out` shape; broadcast
/// axes get stride 0.
fn expanded_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = row_major_strides(shape);
    let pad = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < pad || shape[i - pad] == 1 {
                0
            } else {
                own[i - pad]
            }
        })
        .collect()
}

/// Calls `f(out_index, a_offset, b_offset)` for every element of `out`.
fn for_each_pair(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for flat in 0..numel(out) {
        f(flat, oa, ob);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            oa -= sa[ax] * out[ax];
            ob -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

fn binary_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, out: &[usize], f: impl Fn(T, T) -> T) -> Tensor<T> {
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<T> = if a.shape() == b.shape() {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else if b.numel() == 1 && a.shape() == out {
        let y = bd[0];
        ad.iter().map(|&x| f(x, y)).collect()
    } else if a.numel() == 1 && b.shape() == out {
        let x = ad[0];
        bd.iter().map(|&y| f(x, y)).collect()
    } else {
        let sa = expanded_strides(a.shape(), out);
        let sb = expanded_strides(b.shape(), out);
        let mut data = vec![T::zero(); numel(out)];
        for_each_pair(out, &sa, &sb, |i, oa, ob| data[i] = f(ad[oa], bd[ob]));
        data
    };
    Tensor::from_parts(out.to_vec(), data)
}

/// Sums `g` (broadcast shape) down to `target`.
pub(crate) fn reduce_to_shape<T: Real>(g: &Tensor<T>, target: &[usize]) -> Tensor<T> {
    if g.shape() == target {
        return g.clone();
    }
    let out = g.shape();
    let st = expanded_strides(target, out);
    let zeros = vec![0; out.len()];
    let mut acc = vec![T::zero(); numel(target)];
    let gd = g.data();
    for_each_pair(out, &st, &zeros, |i, ot, _| acc[ot] += gd[i]);
    Tensor::from_parts(target.to_vec(), acc)
}

pub(crate) fn binary_backward<T: Real>(
    kind: BinaryKind,
    a: &Tensor<T>,
    b: &Tensor<T>,
    out: &Tensor<T>,
    g: &Tensor<T>,
) -> [Option<Tensor<T>>; 2] {
    let shape = g.shape();
    let (ga, gb) = match kind {
        BinaryKind::Add => (g.clone(), g.clone()),
        BinaryKind::Sub => (g.clone(), g.map(|v| -v)),
        BinaryKind::Mul => (binary_map(g, b, shape, |x, y| x * y), binary_map(g, a, shape, |x, y| x * y)),
        BinaryKind::Div => {
            let ga = binary_map(g, b, shape, |x, y| x / y);
            // d(a/b)/db = -out / b
            let ob = binary_map(out, b, shape, |o, y| o / y);
            let gb = binary_map(g, &ob, shape, |x, y| -x * y);
            (ga, gb)
        }
    };
    [Some(reduce_to_shape(&ga, a.shape())), Some(reduce_to_shape(&gb, b.shape()))]
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Real>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    let th = u.tanh();
    let du = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_A) * x * x);
    T::lit(0.5) * (T::one() + th) + T::lit(0.5) * x * (T::one() - th * th) * du
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn apply_unary<T: Real>(kind: &UnaryKind<T>, x: T) -> T {
    match *kind {
        UnaryKind::Relu => x.max(T::zero()),
        UnaryKind::Gelu => gelu(x),
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Log => x.ln(),
        UnaryKind::Sqrt => x.sqrt(),
        UnaryKind::Softplus => softplus(x),
        UnaryKind::ClampMin(c) => x.max(c),
        UnaryKind::Scale(c) => x * c,
        UnaryKind::AddScalar(c) => x + c,
    }
}

pub(crate) fn unary_backward<T: Real>(kind: &UnaryKind<T>, x: &Tensor<T>, y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .zip(g.data())
        .map(|((&x, &y), &g)| {
            g * match *kind {
                UnaryKind::Relu => {
                    if x > T::zero() {
                        T::one()
                    } else {
                        T::zero()
                    }
                }
                UnaryKind::Gelu => gelu_grad(x),
                UnaryKind::Tanh => T::one() - y * y,
                UnaryKind::Exp => y,
                UnaryKind::Log => T::one() / x,
                UnaryKind::Sqrt => T::lit(0.5) / y,
                UnaryKind::Softplus => sigmoid(x),
                UnaryKind::ClampMin(c) => {
                    if x > c {
                        T::one()
                    } else {
                        T::zero()
                    }
                }
                UnaryKind::Scale(c) => c,
                UnaryKind::AddScalar(_) => T::one(),
            }
        })
        .collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

impl<T: Real> Graph<T> {
    fn binary(&mut self, name: &'static str, kind: BinaryKind, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        let out = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| TensorError::ShapeMismatch {
            op: name,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })?;
        let value = match kind {
            BinaryKind::Add => binary_map(a, b, &out, |x, y| x + y),
            BinaryKind::Sub => binary_map(a, b, &out, |x, y| x - y),
            BinaryKind::Mul => binary_map(a, b, &out, |x, y| x * y),
            BinaryKind::Div => binary_map(a, b, &out, |x, y| x / y),
        };
        self.push(name, value, Op::Binary { kind, lhs, rhs })
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary("add", BinaryKind::Add, lhs, rhs)
    }

    pub fn sub(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary("sub", BinaryKind::Sub, lhs, rhs)
    }

    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary("mul", BinaryKind::Mul, lhs, rhs)
    }

    pub fn div(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary("div", BinaryKind::Div, lhs, rhs)
    }

    fn unary(&mut self, name: &'static str, kind: UnaryKind<T>, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| apply_unary(&kind, v));
        self.push(name, value, Op::Unary { kind, x })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", UnaryKind::Relu, x)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary("gelu", UnaryKind::Gelu, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", UnaryKind::Tanh, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", UnaryKind::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", UnaryKind::Log, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary("sqrt", UnaryKind::Sqrt, x)
    }

    /// `log(1 + exp(x))`, computed stably.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary("softplus", UnaryKind::Softplus, x)
    }

    pub fn clamp_min(&mut self, x: Var, min: T) -> Result<Var> {
        self.unary("clamp_min", UnaryKind::ClampMin(min), x)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        self.unary("scale", UnaryKind::Scale(factor), x)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary("add_scalar", UnaryKind::AddScalar(c), x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }
}
