//! Model configuration.
//!
//! A config file is flat `key = value` text:
//!
//! ```text
//! name = toy
//! c0 = 1
//! f0 = 80
//! stages = 1x2, 2x1, 1x2, 2x1   # freq_stride x time_stride per stage
//! blocks_2d = 1                 # one value, or one per stage
//! blocks_1d = 1
//! kernel_1d = 7
//! heads = 4
//! asp_hidden = 32
//! embed_dim = 64
//! ```

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KeyValues;

/// One stage of the network: a frequency stride (which doubles channels) or
/// a time stride (which leaves channels alone), never both.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub freq_stride: usize,
    pub time_stride: usize,
    pub blocks_2d: usize,
    pub blocks_1d: usize,
}

impl StageSpec {
    pub fn new(freq_stride: usize, time_stride: usize) -> Self {
        Self {
            freq_stride,
            time_stride,
            blocks_2d: 1,
            blocks_1d: 1,
        }
    }

    pub fn with_blocks(mut self, blocks_2d: usize, blocks_1d: usize) -> Self {
        self.blocks_2d = blocks_2d;
        self.blocks_1d = blocks_1d;
        self
    }

    /// Channel growth across the stage; equals the frequency stride.
    pub fn channel_multiplier(&self) -> usize {
        self.freq_stride
    }

    pub fn is_time_pool(&self) -> bool {
        self.time_stride == 2
    }

    /// `index` is 1-based and only used for error messages.
    pub fn validate(&self, index: usize) -> Result<()> {
        let err = |msg: String| Err(Error::Plan { stage: index, msg });
        if !matches!(self.freq_stride, 1 | 2) || !matches!(self.time_stride, 1 | 2) {
            return err(format!(
                "strides must be 1 or 2, got {}x{}",
                self.freq_stride, self.time_stride
            ));
        }
        if self.freq_stride == 2 && self.time_stride == 2 {
            return err("a stage pools frequency or time, not both".into());
        }
        Ok(())
    }
}

impl fmt::Display for StageSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.freq_stride, self.time_stride)
    }
}

/// The six-stage pattern that alternates frequency and time pooling.
pub fn reference_stage_pattern() -> Vec<StageSpec> {
    [(1, 1), (2, 1), (1, 2), (2, 1), (1, 2), (2, 1)]
        .into_iter()
        .map(|(f, t)| StageSpec::new(f, t))
        .collect()
}

/// Feed-forward expansion inside the 1D blocks.
pub const FFN_EXPANSION: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub name: String,
    /// Stem channels.
    pub c0: usize,
    /// Mel bins of the input features.
    pub f0: usize,
    pub stages: Vec<StageSpec>,
    pub kernel_1d: usize,
    pub heads: usize,
    pub asp_hidden: usize,
    pub embed_dim: usize,
}

const KEYS: &[&str] = &[
    "name",
    "c0",
    "f0",
    "stages",
    "blocks_2d",
    "blocks_1d",
    "kernel_1d",
    "heads",
    "asp_hidden",
    "embed_dim",
];

fn parse_list(key: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| Error::Config(format!("{key}: {s:?}: {e}")))
        })
        .collect()
}

fn per_stage(kv: &KeyValues, key: &str, n: usize) -> Result<Vec<usize>> {
    let values = match kv.raw(key) {
        None => vec![1],
        Some(raw) => parse_list(key, raw)?,
    };
    match values.len() {
        1 => Ok(vec![values[0]; n]),
        len if len == n => Ok(values),
        len => Err(Error::Config(format!(
            "{key}: expected 1 or {n} values, got {len}"
        ))),
    }
}

impl ModelConfig {
    /// Small four-stage model used for desk-scale training; about 0.03
    /// GMACs on a 2-second input.
    pub fn toy() -> Self {
        Self {
            name: "toy".into(),
            c0: 1,
            f0: 80,
            stages: [(1, 2), (2, 1), (1, 2), (2, 1)]
                .into_iter()
                .map(|(f, t)| StageSpec::new(f, t))
                .collect(),
            kernel_1d: 7,
            heads: 4,
            asp_hidden: 32,
            embed_dim: 64,
        }
    }

    /// Width of the shared 1D representation.
    pub fn width(&self) -> usize {
        self.c0 * self.f0
    }

    pub fn time_pool_stages(&self) -> usize {
        self.stages.iter().filter(|s| s.is_time_pool()).count()
    }

    /// Product of all time strides; input frames are padded to a multiple.
    pub fn time_divisor(&self) -> usize {
        1 << self.time_pool_stages()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c0", self.c0),
            ("f0", self.f0),
            ("kernel_1d", self.kernel_1d),
            ("heads", self.heads),
            ("asp_hidden", self.asp_hidden),
            ("embed_dim", self.embed_dim),
        ];
        if let Some((key, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{key} must be positive")));
        }
        if self.kernel_1d % 2 == 0 {
            return Err(Error::Config(format!("kernel_1d {} must be odd", self.kernel_1d)));
        }
        if self.width() % self.heads != 0 {
            return Err(Error::Config(format!(
                "width c0*f0 = {} not divisible by {} heads",
                self.width(),
                self.heads
            )));
        }
        for (i, s) in self.stages.iter().enumerate() {
            s.validate(i + 1)?;
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.ensure_known(KEYS)?;
        let required = |key: &str| -> Result<usize> {
            kv.get(key)?
                .ok_or_else(|| Error::Config(format!("missing key {key}")))
        };
        let mut stages = Vec::new();
        if let Some(raw) = kv.raw("stages").filter(|r| !r.is_empty()) {
            for item in raw.split(',') {
                let item = item.trim();
                let (f, t) = item
                    .split_once('x')
                    .ok_or_else(|| Error::Config(format!("stages: {item:?} is not FxT")))?;
                let parse = |s: &str| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|e| Error::Config(format!("stages: {item:?}: {e}")))
                };
                stages.push(StageSpec::new(parse(f)?, parse(t)?));
            }
        }
        let b2 = per_stage(kv, "blocks_2d", stages.len())?;
        let b1 = per_stage(kv, "blocks_1d", stages.len())?;
        for (s, (n2, n1)) in stages.iter_mut().zip(b2.into_iter().zip(b1)) {
            s.blocks_2d = n2;
            s.blocks_1d = n1;
        }
        let cfg = Self {
            name: kv.raw("name").unwrap_or("model").to_string(),
            c0: required("c0")?,
            f0: kv.get_or("f0", 80)?,
            stages,
            kernel_1d: kv.get_or("kernel_1d", 7)?,
            heads: kv.get_or("heads", 4)?,
            asp_hidden: kv.get_or("asp_hidden", 128)?,
            embed_dim: kv.get_or("embed_dim", 192)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KeyValues::parse(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KeyValues::load(path)?)
    }

    pub fn to_kv(&self) -> KeyValues {
        let join = |f: &dyn Fn(&StageSpec) -> String| {
            self.stages.iter().map(f).collect::<Vec<_>>().join(", ")
        };
        let mut kv = KeyValues::default();
        kv.insert("name", &self.name);
        kv.insert("c0", self.c0);
        kv.insert("f0", self.f0);
        kv.insert("stages", join(&|s| s.to_string()));
        kv.insert("blocks_2d", join(&|s| s.blocks_2d.to_string()));
        kv.insert("blocks_1d", join(&|s| s.blocks_1d.to_string()));
        kv.insert("kernel_1d", self.kernel_1d);
        kv.insert("heads", self.heads);
        kv.insert("asp_hidden", self.asp_hidden);
        kv.insert("embed_dim", self.embed_dim);
        kv
    }

    /// Same config with every time stride forced to 1.
    pub fn without_time_strides(&self) -> Self {
        let mut cfg = self.clone();
        for s in &mut cfg.stages {
            s.time_stride = 1;
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let cfg = ModelConfig::parse(
            "c0 = 2\nf0 = 16\nstages = 1x1, 2x1, 1x2\nblocks_2d = 1, 2, 1\nblocks_1d = 2\nheads = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.stages.len(), 3);
        assert_eq!(cfg.stages[1].blocks_2d, 2);
        assert!(cfg.stages.iter().all(|s| s.blocks_1d == 2));
        assert_eq!(cfg.time_divisor(), 2);
        assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn stage_rules_are_enforced() {
        let err = ModelConfig::parse("c0 = 2\nf0 = 16\nstages = 1x1, 2x2").unwrap_err();
        assert!(matches!(err, Error::Plan { stage: 2, .. }), "{err}");
        assert!(ModelConfig::parse("c0 = 2\nf0 = 16\nstages = 3x1").is_err());
        assert!(ModelConfig::parse("c0 = 2\nf0 = 16\nkernel_1d = 4").is_err());
        assert!(ModelConfig::parse("c0 = 1\nf0 = 10\nheads = 4").is_err());
        assert!(ModelConfig::parse("f0 = 16").is_err());
    }

    #[test]
    fn toy_is_valid() {
        ModelConfig::toy().validate().unwrap();
        assert_eq!(StageSpec::new(2, 1).channel_multiplier(), 2);
        assert_eq!(StageSpec::new(1, 2).channel_multiplier(), 1);
    }
}
