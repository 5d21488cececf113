use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::objective::{LossKind, MarginSchedule};

/// Optimizer, schedule and data settings for both training stages.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    /// Seed of the synthetic dataset, kept apart so several training seeds
    /// can share one dataset.
    pub data_seed: u64,
    pub n_speakers: usize,
    pub train_utts: usize,
    pub trial_utts: usize,
    pub train_seconds: f64,
    pub trial_seconds: f64,

    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub segment_seconds: f64,

    pub lm_epochs: usize,
    pub lm_segment_seconds: f64,
    pub lm_lr: f64,
    pub lm_lr_final: f64,

    pub loss: LossKind,
    pub scale: f64,
    pub margin: MarginSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_seed: 1234,
            n_speakers: 20,
            train_utts: 8,
            trial_utts: 4,
            train_seconds: 4.0,
            trial_seconds: 3.0,
            batch_size: 16,
            steps_per_epoch: 10,
            epochs: 60,
            warmup_epochs: 6,
            lr_max: 0.1,
            lr_min: 6e-5,
            momentum: 0.9,
            nesterov: true,
            weight_decay: 2e-5,
            segment_seconds: 2.0,
            lm_epochs: 5,
            lm_segment_seconds: 6.0,
            lm_lr: 1e-4,
            lm_lr_final: 2.5e-5,
            loss: LossKind::Sf2c,
            scale: 32.0,
            margin: MarginSchedule::default(),
        }
    }
}

const KEYS: &[&str] = &[
    "seed",
    "data_seed",
    "n_speakers",
    "train_utts",
    "trial_utts",
    "train_seconds",
    "trial_seconds",
    "batch_size",
    "steps_per_epoch",
    "epochs",
    "warmup_epochs",
    "lr_max",
    "lr_min",
    "momentum",
    "nesterov",
    "weight_decay",
    "segment_seconds",
    "lm_epochs",
    "lm_segment_seconds",
    "lm_lr",
    "lm_lr_final",
    "loss",
    "scale",
    "margin_start",
    "margin_end",
    "margin_ramp_start",
    "margin_ramp_end",
    "lm_margin",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.lr_min > 0.0 && self.lr_min < self.lr_max) {
            return bad("need 0 < lr_min < lr_max");
        }
        if self.warmup_epochs >= self.epochs {
            return bad("warmup_epochs must be below epochs");
        }
        if self.lm_epochs > 0 && !(self.lm_lr_final > 0.0 && self.lm_lr_final <= self.lm_lr) {
            return bad("need 0 < lm_lr_final <= lm_lr");
        }
        if self.n_speakers < 2 {
            return bad("need at least two speakers");
        }
        if self.batch_size == 0 || self.steps_per_epoch == 0 || self.train_utts == 0 {
            return bad("batch_size, steps_per_epoch and train_utts must be positive");
        }
        if self.trial_utts < 2 {
            return bad("trial_utts must be at least 2 to form target trials");
        }
        let seconds = [
            self.segment_seconds,
            self.lm_segment_seconds,
            self.train_seconds,
            self.trial_seconds,
        ];
        if seconds.iter().any(|&s| !(s >= 0.05)) {
            return bad("durations must be at least 0.05 s");
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || !(self.scale > 0.0) {
            return bad("momentum must be in [0, 1), weight_decay >= 0, scale > 0");
        }
        let m = &self.margin;
        if !(m.ramp_start < m.ramp_end) || m.m_end < m.m_start {
            return bad("margin ramp must be increasing");
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.ensure_known(KEYS)?;
        let d = Self::default();
        let loss = match kv.raw("loss") {
            None => d.loss,
            Some(s) => s.parse().map_err(Error::Config)?,
        };
        let cfg = Self {
            seed: kv.get_or("seed", d.seed)?,
            data_seed: kv.get_or("data_seed", d.data_seed)?,
            n_speakers: kv.get_or("n_speakers", d.n_speakers)?,
            train_utts: kv.get_or("train_utts", d.train_utts)?,
            trial_utts: kv.get_or("trial_utts", d.trial_utts)?,
            train_seconds: kv.get_or("train_seconds", d.train_seconds)?,
            trial_seconds: kv.get_or("trial_seconds", d.trial_seconds)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            steps_per_epoch: kv.get_or("steps_per_epoch", d.steps_per_epoch)?,
            epochs: kv.get_or("epochs", d.epochs)?,
            warmup_epochs: kv.get_or("warmup_epochs", d.warmup_epochs)?,
            lr_max: kv.get_or("lr_max", d.lr_max)?,
            lr_min: kv.get_or("lr_min", d.lr_min)?,
            momentum: kv.get_or("momentum", d.momentum)?,
            nesterov: kv.get_or("nesterov", d.nesterov)?,
            weight_decay: kv.get_or("weight_decay", d.weight_decay)?,
            segment_seconds: kv.get_or("segment_seconds", d.segment_seconds)?,
            lm_epochs: kv.get_or("lm_epochs", d.lm_epochs)?,
            lm_segment_seconds: kv.get_or("lm_segment_seconds", d.lm_segment_seconds)?,
            lm_lr: kv.get_or("lm_lr", d.lm_lr)?,
            lm_lr_final: kv.get_or("lm_lr_final", d.lm_lr_final)?,
            loss,
            scale: kv.get_or("scale", d.scale)?,
            margin: MarginSchedule {
                m_start: kv.get_or("margin_start", d.margin.m_start)?,
                m_end: kv.get_or("margin_end", d.margin.m_end)?,
                ramp_start: kv.get_or("margin_ramp_start", d.margin.ramp_start)?,
                ramp_end: kv.get_or("margin_ramp_end", d.margin.ramp_end)?,
                lm_margin: kv.get_or("lm_margin", d.margin.lm_margin)?,
            },
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
        let mut kv = KeyValues::default();
        kv.insert("seed", self.seed);
        kv.insert("data_seed", self.data_seed);
        kv.insert("n_speakers", self.n_speakers);
        kv.insert("train_utts", self.train_utts);
        kv.insert("trial_utts", self.trial_utts);
        kv.insert("train_seconds", self.train_seconds);
        kv.insert("trial_seconds", self.trial_seconds);
        kv.insert("batch_size", self.batch_size);
        kv.insert("steps_per_epoch", self.steps_per_epoch);
        kv.insert("epochs", self.epochs);
        kv.insert("warmup_epochs", self.warmup_epochs);
        kv.insert("lr_max", self.lr_max);
        kv.insert("lr_min", self.lr_min);
        kv.insert("momentum", self.momentum);
        kv.insert("nesterov", self.nesterov);
        kv.insert("weight_decay", self.weight_decay);
        kv.insert("segment_seconds", self.segment_seconds);
        kv.insert("lm_epochs", self.lm_epochs);
        kv.insert("lm_segment_seconds", self.lm_segment_seconds);
        kv.insert("lm_lr", self.lm_lr);
        kv.insert("lm_lr_final", self.lm_lr_final);
        kv.insert("loss", self.loss);
        kv.insert("scale", self.scale);
        kv.insert("margin_start", self.margin.m_start);
        kv.insert("margin_end", self.margin.m_end);
        kv.insert("margin_ramp_start", self.margin.ramp_start);
        kv.insert("margin_ramp_end", self.margin.ramp_end);
        kv.insert("lm_margin", self.margin.lm_margin);
        kv
    }

    /// Pretraining learning rate at a fractional epoch: linear warmup from
    /// `lr_max / warmup` to `lr_max`, then exponential decay to `lr_min` at
    /// the final epoch.
    pub fn lr_at(&self, epoch: f64) -> Result<f64> {
        let total = self.epochs as f64;
        if !(0.0..=total).contains(&epoch) {
            return Err(Error::Config(format!("epoch {epoch} outside [0, {total}]")));
        }
        let w = self.warmup_epochs as f64;
        if epoch < w {
            let start = self.lr_max / w;
            return Ok(start + (self.lr_max - start) * epoch / w);
        }
        Ok(geometric(self.lr_max, self.lr_min, (epoch - w) / (total - w)))
    }

    /// Finetuning learning rate: exponential decay from `lm_lr` to
    /// `lm_lr_final` over `lm_epochs`.
    pub fn lm_lr_at(&self, epoch: f64) -> Result<f64> {
        let total = self.lm_epochs as f64;
        if !(0.0..=total).contains(&epoch) || total == 0.0 {
            return Err(Error::Config(format!("finetune epoch {epoch} outside [0, {total}]")));
        }
        Ok(geometric(self.lm_lr, self.lm_lr_final, epoch / total))
    }
}

/// `from^(1-frac) * to^frac`, written so both endpoints are exact.
fn geometric(from: f64, to: f64, frac: f64) -> f64 {
    from.powf(1.0 - frac) * to.powf(frac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_points() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(6.0).unwrap(), 0.1);
        assert_eq!(c.lr_at(60.0).unwrap(), 6e-5);
        assert!((c.lr_at(33.0).unwrap() - (0.1f64 * 6e-5).sqrt()).abs() < 1e-15);
        assert!((c.lr_at(0.0).unwrap() - 0.1 / 6.0).abs() < 1e-15);
        assert!(c.lr_at(61.0).is_err());
        assert!(c.lr_at(-0.5).is_err());
        assert_eq!(c.lm_lr_at(0.0).unwrap(), 1e-4);
    }

    #[test]
    fn kv_round_trip_and_validation() {
        let c = TrainConfig {
            loss: LossKind::AamSoftmax,
            seed: 7,
            ..Default::default()
        };
        assert_eq!(TrainConfig::from_kv(&c.to_kv()).unwrap(), c);
        assert!(TrainConfig::parse("lr_min = 0.5").is_err());
        assert!(TrainConfig::parse("warmup_epochs = 60").is_err());
        assert!(TrainConfig::parse("loss = hinge").is_err());
        assert!(TrainConfig::parse("bogus = 1").is_err());
    }
}
