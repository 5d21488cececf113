//! Stage shape planning and the 2D/1D reshapes between stages.
//!
//! Every stage keeps `C * F` fixed: a frequency stride halves `F` and doubles
//! `C`, a time stride halves `T` and leaves `C` alone. The 1D view of any
//! stage is therefore `[B, C0 * F0, T_s]`.

use std::fmt;

use redim_tensor::{Graph, Real, Tensor, TensorError, Var};

use crate::config::{ModelConfig, StageSpec};
use crate::error::{Error, Result};

/// A `(C, F, T)` feature-map extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub c: usize,
    pub f: usize,
    pub t: usize,
}

impl Dims {
    pub fn volume(&self) -> usize {
        self.c * self.f * self.t
    }

    pub fn width(&self) -> usize {
        self.c * self.f
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.c, self.f, self.t)
    }
}

/// A shape relative to the stem output `(C, F, T)`: `(mC, F/df, T/dt)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SymDims {
    pub c_mul: usize,
    pub f_div: usize,
    pub t_div: usize,
}

impl SymDims {
    pub const BASE: Self = Self {
        c_mul: 1,
        f_div: 1,
        t_div: 1,
    };

    fn apply(self, spec: &StageSpec) -> Self {
        Self {
            c_mul: self.c_mul * spec.channel_multiplier(),
            f_div: self.f_div * spec.freq_stride,
            t_div: self.t_div * spec.time_stride,
        }
    }

    pub fn channels(&self) -> String {
        scaled(self.c_mul, "C")
    }

    /// Volume as a fraction of `C*F*T`, rendered like `C·F·T/2`.
    pub fn volume(&self) -> String {
        let (num, den) = (self.c_mul, self.f_div * self.t_div);
        let g = gcd(num, den);
        let (num, den) = (num / g, den / g);
        let mut s = scaled(num, "C·F·T");
        if den > 1 {
            s.push_str(&format!("/{den}"));
        }
        s
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn scaled(m: usize, sym: &str) -> String {
    if m == 1 {
        sym.to_string()
    } else {
        format!("{m}{sym}")
    }
}

fn divided(sym: &str, d: usize) -> String {
    if d == 1 {
        sym.to_string()
    } else {
        format!("{sym}/{d}")
    }
}

impl fmt::Display for SymDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {})",
            self.channels(),
            divided("F", self.f_div),
            divided("T", self.t_div)
        )
    }
}

/// One row of the symbolic plan table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolicRow {
    pub block: usize,
    pub input: SymDims,
    pub freq_stride: usize,
    pub time_stride: usize,
    pub output: SymDims,
}

impl SymbolicRow {
    pub fn cells(&self) -> [String; 7] {
        [
            self.block.to_string(),
            self.input.to_string(),
            self.freq_stride.to_string(),
            self.time_stride.to_string(),
            self.output.channels(),
            self.output.to_string(),
            self.output.volume(),
        ]
    }
}

pub const TABLE_HEADER: [&str; 7] = [
    "Block #",
    "In shape",
    "S_f",
    "S_t",
    "Channels",
    "Out shape",
    "Volume",
];

/// Symbolic trajectory of a stage pattern; validates every stage.
pub fn symbolic_rows(stages: &[StageSpec]) -> Result<Vec<SymbolicRow>> {
    let mut cur = SymDims::BASE;
    stages
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            spec.validate(i + 1)?;
            let out = cur.apply(spec);
            let row = SymbolicRow {
                block: i + 1,
                input: cur,
                freq_stride: spec.freq_stride,
                time_stride: spec.time_stride,
                output: out,
            };
            cur = out;
            Ok(row)
        })
        .collect()
}

/// Planned extents of one stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StagePlan {
    /// 1-based.
    pub index: usize,
    pub spec: StageSpec,
    pub input: Dims,
    pub output: Dims,
    /// `T0 / T_out`: cumulative product of time strides up to this stage.
    pub time_factor: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapePlan {
    /// Stem output extent.
    pub stem: Dims,
    pub stages: Vec<StagePlan>,
}

impl ShapePlan {
    /// Plans `cfg` for `t` input frames; `t` must already be padded.
    pub fn new(cfg: &ModelConfig, t: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::Config("input must have at least one frame".into()));
        }
        let stem = Dims {
            c: cfg.c0,
            f: cfg.f0,
            t,
        };
        let mut cur = stem;
        let mut factor = 1;
        let mut stages = Vec::with_capacity(cfg.stages.len());
        for (i, spec) in cfg.stages.iter().enumerate() {
            let index = i + 1;
            spec.validate(index)?;
            let err = |axis: &str, n: usize| Error::Plan {
                stage: index,
                msg: format!("{axis} extent {n} is not divisible by stride 2"),
            };
            if cur.f % spec.freq_stride != 0 {
                return Err(err("frequency", cur.f));
            }
            if cur.t % spec.time_stride != 0 {
                return Err(err("time", cur.t));
            }
            let out = Dims {
                c: cur.c * spec.channel_multiplier(),
                f: cur.f / spec.freq_stride,
                t: cur.t / spec.time_stride,
            };
            factor *= spec.time_stride;
            stages.push(StagePlan {
                index,
                spec: *spec,
                input: cur,
                output: out,
                time_factor: factor,
            });
            cur = out;
        }
        Ok(Self { stem, stages })
    }

    pub fn width(&self) -> usize {
        self.stem.width()
    }

    pub fn time_factors(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.time_factor).collect()
    }

    /// Numeric table with the same columns as the symbolic one.
    pub fn render(&self) -> String {
        let rows = self.stages.iter().map(|s| {
            [
                s.index.to_string(),
                s.input.to_string(),
                s.spec.freq_stride.to_string(),
                s.spec.time_stride.to_string(),
                s.output.c.to_string(),
                s.output.to_string(),
                s.output.volume().to_string(),
            ]
        });
        render_table(rows)
    }
}

pub fn render_symbolic(rows: &[SymbolicRow]) -> String {
    render_table(rows.iter().map(SymbolicRow::cells))
}

fn render_table(rows: impl Iterator<Item = [String; 7]>) -> String {
    let rows: Vec<[String; 7]> = rows.collect();
    let mut widths = TABLE_HEADER.map(|h| h.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join(" | ")
            .trim_end()
            .to_string()
    };
    let mut out = line(TABLE_HEADER.to_vec());
    out.push('\n');
    out.push_str(
        &widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("-|-"),
    );
    out.push('\n');
    for row in &rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

/// Smallest multiple of `divisor` that is `>= t`.
pub fn padded_len(t: usize, divisor: usize) -> usize {
    t.div_ceil(divisor) * divisor
}

/// Pads the last axis of `x` to a multiple of `divisor` by repeating the
/// final frame.
pub fn pad_time<T: Real>(x: &Tensor<T>, divisor: usize) -> Result<Tensor<T>> {
    if divisor == 0 {
        return Err(Error::Config("time divisor must be positive".into()));
    }
    let shape = x.shape();
    let t = shape[shape.len() - 1];
    let target = padded_len(t, divisor);
    if target == t {
        return Ok(x.clone());
    }
    let mut data = Vec::with_capacity(x.numel() / t * target);
    for row in x.data().chunks(t) {
        data.extend_from_slice(row);
        data.extend(std::iter::repeat_n(row[t - 1], target - t));
    }
    let mut out_shape = shape.to_vec();
    *out_shape.last_mut().expect("non-empty shape") = target;
    Ok(Tensor::new(out_shape, data)?)
}

fn rank_error(op: &'static str, shape: &[usize], want: usize) -> Error {
    Error::Tensor(TensorError::Contract {
        op,
        msg: format!("expected rank {want}, got shape {shape:?}"),
    })
}

/// `[B, C, F, T] -> [B, C*F, T]`, channel-major (row `c*F + f`).
pub fn to1d<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    match *x.shape() {
        [b, c, f, t] => Ok(x.clone().reshape(vec![b, c * f, t])?),
        _ => Err(rank_error("to1d", x.shape(), 4)),
    }
}

/// Inverse of [`to1d`]: `[B, C*F, T] -> [B, C, F, T]`.
pub fn to2d<T: Real>(x: &Tensor<T>, c: usize, f: usize) -> Result<Tensor<T>> {
    match *x.shape() {
        [b, d, t] if d == c * f => Ok(x.clone().reshape(vec![b, c, f, t])?),
        [_, d, _] => Err(Error::Tensor(TensorError::Contract {
            op: "to2d",
            msg: format!("width {d} != C*F = {c}*{f}"),
        })),
        _ => Err(rank_error("to2d", x.shape(), 3)),
    }
}

/// Graph versions of the reshapes.
pub fn to1d_var<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    match *g.shape(x) {
        [b, c, f, t] => Ok(g.reshape(x, &[b, c * f, t])?),
        _ => Err(rank_error("to1d", g.shape(x), 4)),
    }
}

pub fn to2d_var<T: Real>(g: &mut Graph<T>, x: Var, c: usize, f: usize) -> Result<Var> {
    match *g.shape(x) {
        [b, d, t] if d == c * f => Ok(g.reshape(x, &[b, c, f, t])?),
        [_, d, _] => Err(Error::Tensor(TensorError::Contract {
            op: "to2d",
            msg: format!("width {d} != C*F = {c}*{f}"),
        })),
        _ => Err(rank_error("to2d", g.shape(x), 3)),
    }
}
