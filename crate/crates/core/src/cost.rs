//! Parameter and multiply-accumulate accounting.
//!
//! Conventions: a convolution costs `Cout * Cin/groups * Kf * Kt * Fout * Tout`
//! MACs, a linear layer `in * out` per position, attention its four
//! projections plus `2 * T^2 * D` for the score and value products.
//! Normalizations, activations, softmax, pooling sums and upsampling are
//! free. Parameters count every weight and bias but not running statistics.

use std::fmt;
use std::fmt::Write as _;

use crate::config::{ModelConfig, FFN_EXPANSION};
use crate::error::{Error, Result};
use crate::frontend::frames_for_seconds;
use crate::plan::{padded_len, ShapePlan};

/// Input length of the compute-budget convention.
pub const MEASURE_SECONDS: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub macs: u64,
}

impl LayerCost {
    /// Convolution with `groups` groups producing a `out_f x out_t` map.
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        name: impl Into<String>,
        cout: usize,
        cin: usize,
        groups: usize,
        kernel: (usize, usize),
        out: (usize, usize),
        bias: bool,
    ) -> Self {
        let weights = cout * (cin / groups) * kernel.0 * kernel.1;
        Self {
            name: name.into(),
            params: (weights + if bias { cout } else { 0 }) as u64,
            macs: (weights * out.0 * out.1) as u64,
        }
    }

    pub fn linear(name: impl Into<String>, fan_in: usize, fan_out: usize, positions: usize, bias: bool) -> Self {
        Self {
            name: name.into(),
            params: (fan_in * fan_out + if bias { fan_out } else { 0 }) as u64,
            macs: (fan_in * fan_out * positions) as u64,
        }
    }

    /// Affine normalization over `channels`.
    pub fn norm(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            params: 2 * channels as u64,
            macs: 0,
        }
    }
}

/// Compute-budget bands on GMACs, as half-open intervals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Band {
    B0,
    B1,
    B2,
    B3,
    B4,
    B5,
    B6,
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B{}", *self as u8)
    }
}

/// Upper bounds of B0..B5; B6 is unbounded.
const BAND_UPPER: [f64; 6] = [0.5, 0.75, 1.5, 3.0, 5.5, 10.0];

pub fn classify_band(gmacs: f64) -> Result<Band> {
    if !(gmacs >= 0.0) {
        return Err(Error::Config(format!("GMACs must be non-negative, got {gmacs}")));
    }
    const BANDS: [Band; 7] = [Band::B0, Band::B1, Band::B2, Band::B3, Band::B4, Band::B5, Band::B6];
    let i = BAND_UPPER.iter().position(|&u| gmacs < u).unwrap_or(6);
    Ok(BANDS[i])
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub rows: Vec<LayerCost>,
    pub params: u64,
    pub macs: u64,
    /// Frames the report was computed for, after padding.
    pub frames: usize,
    /// `C * F * T` at the output of every stage.
    pub stage_volumes: Vec<usize>,
}

impl CostReport {
    pub fn from_rows(rows: Vec<LayerCost>, frames: usize) -> Self {
        Self {
            params: rows.iter().map(|r| r.params).sum(),
            macs: rows.iter().map(|r| r.macs).sum(),
            rows,
            frames,
            stage_volumes: Vec::new(),
        }
    }

    pub fn gmacs(&self) -> f64 {
        self.macs as f64 / 1e9
    }

    pub fn band(&self) -> Result<Band> {
        classify_band(self.gmacs())
    }

    /// `name,params,macs` rows followed by a `total` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,params,macs\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.name, r.params, r.macs);
        }
        let _ = writeln!(out, "total,{},{}", self.params, self.macs);
        out
    }

    pub fn summary(&self) -> String {
        let band = self.band().map(|b| b.to_string()).unwrap_or_else(|_| "-".into());
        format!(
            "{} params, {} MACs ({:.4} GMACs) at T={}, band {band}",
            self.params,
            self.macs,
            self.gmacs(),
            self.frames
        )
    }
}

/// Cost of one forward pass over `frames` feature frames (padded up to the
/// config's time divisor, as the model does).
pub fn count_frames(cfg: &ModelConfig, frames: usize) -> Result<CostReport> {
    cfg.validate()?;
    let t = padded_len(frames.max(1), cfg.time_divisor());
    let plan = ShapePlan::new(cfg, t)?;
    let d = cfg.width();
    let mut rows = vec![
        LayerCost::conv("stem.conv", cfg.c0, 1, 1, (3, 3), (cfg.f0, t), false),
        LayerCost::norm("stem.bn", cfg.c0),
    ];
    for st in &plan.stages {
        let (i, inp, out) = (st.index, st.input, st.output);
        for j in 0..st.spec.blocks_2d {
            let p = format!("stage{i}.block2d.{j}");
            for k in 1..=2 {
                rows.push(LayerCost::conv(format!("{p}.conv{k}"), inp.c, inp.c, 1, (3, 3), (inp.f, inp.t), false));
                rows.push(LayerCost::norm(format!("{p}.bn{k}"), inp.c));
            }
        }
        let p = format!("stage{i}.down");
        rows.push(LayerCost::conv(format!("{p}.conv"), out.c, inp.c, 1, (3, 3), (out.f, out.t), false));
        rows.push(LayerCost::norm(format!("{p}.bn"), out.c));
        for j in 0..st.spec.blocks_1d {
            let p = format!("stage{i}.block1d.{j}");
            let tt = out.t;
            let h = FFN_EXPANSION * d;
            rows.push(LayerCost::conv(format!("{p}.dw"), d, d, d, (1, cfg.kernel_1d), (1, tt), true));
            rows.push(LayerCost::norm(format!("{p}.ln"), d));
            rows.push(LayerCost::linear(format!("{p}.pw1"), d, h, tt, true));
            rows.push(LayerCost::linear(format!("{p}.pw2"), h, d, tt, true));
            rows.push(LayerCost::norm(format!("{p}.attn_ln"), d));
            for proj in ["q", "k", "v", "o"] {
                rows.push(LayerCost::linear(format!("{p}.attn.{proj}"), d, d, tt, proj != "k"));
            }
            rows.push(LayerCost {
                name: format!("{p}.attn.scores"),
                params: 0,
                macs: (2 * tt * tt * d) as u64,
            });
        }
    }
    rows.push(LayerCost {
        name: "agg.weights".into(),
        params: cfg.stages.len().max(1) as u64,
        macs: 0,
    });
    rows.push(LayerCost::linear("asp.w", d, cfg.asp_hidden, t, true));
    rows.push(LayerCost::linear("asp.v", cfg.asp_hidden, 1, t, false));
    rows.push(LayerCost::norm("asp.bn", 2 * d));
    rows.push(LayerCost::linear("head", 2 * d, cfg.embed_dim, 1, true));
    let mut report = CostReport::from_rows(rows, t);
    report.stage_volumes = plan.stages.iter().map(|s| s.output.volume()).collect();
    Ok(report)
}

/// Cost at the two-second measurement convention.
pub fn count(cfg: &ModelConfig) -> Result<CostReport> {
    count_seconds(cfg, MEASURE_SECONDS)
}

pub fn count_seconds(cfg: &ModelConfig, seconds: f64) -> Result<CostReport> {
    count_frames(cfg, frames_for_seconds(seconds))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ablation {
    pub gmacs_with: f64,
    pub gmacs_without: f64,
    /// `without / with`.
    pub ratio: f64,
}

/// Compute with every time stride forced to 1, relative to the config as
/// given, at `frames` input frames. Both variants see the same padded input.
pub fn ablate_time_strides_frames(cfg: &ModelConfig, frames: usize) -> Result<Ablation> {
    let frames = padded_len(frames.max(1), cfg.time_divisor());
    let with = count_frames(cfg, frames)?;
    let without = count_frames(&cfg.without_time_strides(), frames)?;
    Ok(Ablation {
        gmacs_with: with.gmacs(),
        gmacs_without: without.gmacs(),
        ratio: without.macs as f64 / with.macs as f64,
    })
}

pub fn ablate_time_strides(cfg: &ModelConfig) -> Result<Ablation> {
    ablate_time_strides_frames(cfg, frames_for_seconds(MEASURE_SECONDS))
}
