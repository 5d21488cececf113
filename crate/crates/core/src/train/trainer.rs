use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redim_tensor::{Graph, Tensor};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::frontend::{crop_segment, Frontend};
use crate::model::{forward, init_params, ParamStore, Session};
use crate::objective::{aam_softmax_loss, init_loss_head, sf2c_loss, LossKind, TrainStage, LOSS_BIAS, LOSS_WEIGHT};
use crate::plan::pad_time;

use super::data::Utterance;
use super::optim::Sgd;
use super::TrainConfig;

/// One optimizer step as logged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    /// Global step within the stage, starting at 1.
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub margin: f64,
}

pub const METRICS_HEADER: &str = "epoch,step,loss,lr,margin";

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6},{:.6e},{:.4}", r.epoch, r.step, r.loss, r.lr, r.margin);
    }
    out
}

/// Mean logged loss of each epoch.
pub fn epoch_losses(rows: &[MetricRow]) -> Vec<f64> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for r in rows {
        if out.len() <= r.epoch {
            out.resize(r.epoch + 1, (0.0, 0));
        }
        out[r.epoch].0 += r.loss;
        out[r.epoch].1 += 1;
    }
    out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub pretrained: ParamStore<f32>,
    pub finetuned: ParamStore<f32>,
    pub pretrain_metrics: Vec<MetricRow>,
    pub lm_metrics: Vec<MetricRow>,
}

/// Network plus loss-head parameters, initialized from `cfg.seed`.
pub fn init_model(model: &ModelConfig, cfg: &TrainConfig, classes: usize) -> Result<ParamStore<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = init_params(model, &mut rng)?;
    init_loss_head(&mut store, classes, model.embed_dim, &mut rng);
    Ok(store)
}

struct Stage<'a> {
    kind: TrainStage,
    epochs: usize,
    segment_seconds: f64,
    lr: &'a dyn Fn(f64) -> Result<f64>,
}

pub struct Trainer<'a> {
    model: &'a ModelConfig,
    cfg: &'a TrainConfig,
    data: &'a [Utterance],
    classes: usize,
    frontend: Frontend,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a ModelConfig, cfg: &'a TrainConfig, data: &'a [Utterance]) -> Result<Self> {
        model.validate()?;
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Config("no training utterances".into()));
        }
        let classes = data.iter().map(|u| u.speaker).max().unwrap_or(0) + 1;
        if classes < 2 {
            return Err(Error::Config("training data needs at least two speakers".into()));
        }
        Ok(Self {
            model,
            cfg,
            data,
            classes,
            frontend: Frontend::new(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Random crops of `seconds` as a padded `[B, F0, T]` batch.
    fn batch(&self, rng: &mut ChaCha8Rng, seconds: f64) -> Result<(Tensor<f32>, Vec<usize>)> {
        let mut feats = Vec::with_capacity(self.cfg.batch_size);
        let mut labels = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let utt = &self.data[rng.random_range(0..self.data.len())];
            let seg = crop_segment(&utt.wave, seconds, rng)?;
            feats.push(pad_time(&self.frontend.fbank(&seg)?, self.model.time_divisor())?);
            labels.push(utt.speaker);
        }
        let (f, t) = (feats[0].dim(0), feats[0].dim(1));
        let data = feats.into_iter().flat_map(Tensor::into_data).collect();
        Ok((Tensor::new(vec![labels.len(), f, t], data)?, labels))
    }

    /// Forward, loss, backward and update on one batch; returns the loss.
    pub fn step(
        &self,
        store: &mut ParamStore<f32>,
        opt: &mut Sgd<f32>,
        x: Tensor<f32>,
        labels: &[usize],
        lr: f64,
        margin: f64,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.input(x)?;
        let mut s = Session::new(&mut g, store, true);
        let out = forward(&mut s, self.model, xv)?;
        let w = s.p(LOSS_WEIGHT)?;
        let b = s.p(LOSS_BIAS)?;
        let bound = s.into_bound();
        let loss = match self.cfg.loss {
            LossKind::Sf2c => sf2c_loss(&mut g, out.embedding, labels, w, b, margin, self.cfg.scale)?,
            LossKind::AamSoftmax => aam_softmax_loss(&mut g, out.embedding, labels, w, margin, self.cfg.scale)?,
        };
        let value = g.value(loss).item() as f64;
        let mut grads = g.backward(loss)?;
        drop(g);
        let updates = bound
            .iter()
            .filter_map(|(name, &v)| grads.take(v).map(|t| (name.as_str(), t)));
        opt.step(store, updates, lr)?;
        Ok(value)
    }

    fn run_stage(
        &self,
        store: &mut ParamStore<f32>,
        stage: &Stage,
        rng: &mut ChaCha8Rng,
        progress: &mut dyn FnMut(TrainStage, &MetricRow),
    ) -> Result<Vec<MetricRow>> {
        let mut opt = Sgd::new(self.cfg.momentum, self.cfg.nesterov, self.cfg.weight_decay);
        let steps = self.cfg.steps_per_epoch;
        let mut rows = Vec::with_capacity(stage.epochs * steps);
        for epoch in 0..stage.epochs {
            let margin = self.cfg.margin.margin_at(epoch as f64, stage.kind)?;
            for s in 0..steps {
                let global = epoch * steps + s + 1;
                let lr = (stage.lr)(epoch as f64 + s as f64 / steps as f64)?;
                let (x, labels) = self.batch(rng, stage.segment_seconds)?;
                let loss = self
                    .step(store, &mut opt, x, &labels, lr, margin)
                    .map_err(|e| {
                        if e.is_numeric() {
                            Error::NonFiniteLoss { epoch, step: global }
                        } else {
                            e
                        }
                    })?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step: global });
                }
                let row = MetricRow {
                    epoch,
                    step: global,
                    loss,
                    lr,
                    margin,
                };
                progress(stage.kind, &row);
                rows.push(row);
            }
        }
        Ok(rows)
    }

    /// Pretraining from `store`.
    pub fn pretrain(
        &self,
        store: &mut ParamStore<f32>,
        progress: &mut dyn FnMut(TrainStage, &MetricRow),
    ) -> Result<Vec<MetricRow>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(1);
        let lr = |e: f64| self.cfg.lr_at(e);
        let stage = Stage {
            kind: TrainStage::Pretrain,
            epochs: self.cfg.epochs,
            segment_seconds: self.cfg.segment_seconds,
            lr: &lr,
        };
        self.run_stage(store, &stage, &mut rng, progress)
    }

    /// Large-margin finetuning: longer segments, constant margin, small
    /// decaying learning rate and fresh momentum.
    pub fn finetune(
        &self,
        store: &mut ParamStore<f32>,
        progress: &mut dyn FnMut(TrainStage, &MetricRow),
    ) -> Result<Vec<MetricRow>> {
        if self.cfg.lm_epochs == 0 {
            return Ok(Vec::new());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(2);
        let lr = |e: f64| self.cfg.lm_lr_at(e);
        let stage = Stage {
            kind: TrainStage::LmFinetune,
            epochs: self.cfg.lm_epochs,
            segment_seconds: self.cfg.lm_segment_seconds,
            lr: &lr,
        };
        self.run_stage(store, &stage, &mut rng, progress)
    }

    /// Both stages from a fresh initialization.
    pub fn run(&self, progress: &mut dyn FnMut(TrainStage, &MetricRow)) -> Result<TrainOutcome> {
        let mut store = init_model(self.model, self.cfg, self.classes)?;
        let pretrain_metrics = self.pretrain(&mut store, progress)?;
        let pretrained = store.clone();
        let lm_metrics = self.finetune(&mut store, progress)?;
        Ok(TrainOutcome {
            pretrained,
            finetuned: store,
            pretrain_metrics,
            lm_metrics,
        })
    }
}
