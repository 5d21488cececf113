//! Margin schedule and margin-based classification losses.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use redim_tensor::{Graph, Real, Tensor, Var};

use crate::error::{Error, Result};
use crate::model::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainStage {
    Pretrain,
    LmFinetune,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginSchedule {
    pub m_start: f64,
    pub m_end: f64,
    pub ramp_start: f64,
    pub ramp_end: f64,
    pub lm_margin: f64,
}

impl Default for MarginSchedule {
    fn default() -> Self {
        Self {
            m_start: 0.0,
            m_end: 0.2,
            ramp_start: 20.0,
            ramp_end: 40.0,
            lm_margin: 0.3,
        }
    }
}

impl MarginSchedule {
    /// Margin at a (possibly fractional) epoch: flat, linear ramp, flat.
    pub fn margin_at(&self, epoch: f64, stage: TrainStage) -> Result<f64> {
        if !(epoch >= 0.0) {
            return Err(Error::Config(format!("epoch {epoch} must be non-negative")));
        }
        Ok(match stage {
            TrainStage::LmFinetune => self.lm_margin,
            TrainStage::Pretrain if epoch <= self.ramp_start => self.m_start,
            TrainStage::Pretrain if epoch >= self.ramp_end => self.m_end,
            TrainStage::Pretrain => {
                let frac = (epoch - self.ramp_start) / (self.ramp_end - self.ramp_start);
                self.m_start + frac * (self.m_end - self.m_start)
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Per-class binary logistic loss with a balanced positive term.
    Sf2c,
    /// Additive angular margin softmax.
    AamSoftmax,
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sf2c" => Ok(Self::Sf2c),
            "aam" => Ok(Self::AamSoftmax),
            other => Err(format!("unknown loss {other:?} (expected sf2c or aam)")),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sf2c => "sf2c",
            Self::AamSoftmax => "aam",
        })
    }
}

pub const LOSS_WEIGHT: &str = "loss.weight";
pub const LOSS_BIAS: &str = "loss.bias";

/// Adds the class-weight matrix `[K, E]` and the scalar logit bias.
pub fn init_loss_head<R: Rng + ?Sized>(store: &mut ParamStore<f32>, classes: usize, embed_dim: usize, rng: &mut R) {
    store.insert(LOSS_WEIGHT, Tensor::randn(vec![classes, embed_dim], 1.0, rng));
    store.insert(LOSS_BIAS, Tensor::zeros(vec![1]));
}

/// Rows of `x` `[B, E]` scaled to unit length.
pub fn l2_normalize<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let sq = g.square(x)?;
    let n = g.sum_axis(sq, 1, true)?;
    let n = g.add_scalar(n, T::lit(1e-12))?;
    let n = g.sqrt(n)?;
    Ok(g.div(x, n)?)
}

fn one_hot<T: Real>(labels: &[usize], classes: usize, value: f64) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Config(format!("label {y} out of range for {classes} classes")));
        }
        data[i * classes + y] = T::lit(value);
    }
    Ok(Tensor::new(vec![labels.len(), classes], data)?)
}

/// Cosines `[B, K]` between embeddings `[B, E]` and class weights `[K, E]`.
fn cosines<T: Real>(g: &mut Graph<T>, emb: Var, weights: Var, labels: &[usize]) -> Result<(Var, usize)> {
    let b = g.shape(emb)[0];
    if labels.len() != b {
        return Err(Error::Config(format!("{} labels for batch of {b}", labels.len())));
    }
    let k = g.shape(weights)[0];
    if k < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    let e = l2_normalize(g, emb)?;
    let w = l2_normalize(g, weights)?;
    Ok((g.matmul(e, w, false, true)?, k))
}

/// Binary-margin loss: for each class `k`,
/// `z_k = scale * (cos_k - margin * [k == y]) + bias`, scored with a
/// logistic loss whose positive term is weighted by `K - 1`. Normalized so
/// all-zero logits give `ln 2`.
pub fn sf2c_loss<T: Real>(
    g: &mut Graph<T>,
    emb: Var,
    labels: &[usize],
    weights: Var,
    bias: Var,
    margin: f64,
    scale: f64,
) -> Result<Var> {
    let (cos, k) = cosines(g, emb, weights, labels)?;
    let shift = g.input(one_hot(labels, k, margin)?)?;
    let z = g.sub(cos, shift)?;
    let z = g.scale(z, T::lit(scale))?;
    let z = g.add(z, bias)?;

    let neg_z = g.scale(z, -T::one())?;
    let pos_term = g.softplus(neg_z)?;
    let neg_term = g.softplus(z)?;
    let pos_w = g.input(one_hot(labels, k, (k - 1) as f64)?)?;
    let neg_w = g.input(one_hot::<T>(labels, k, 1.0)?.map(|v| T::one() - v))?;
    let a = g.mul(pos_term, pos_w)?;
    let b = g.mul(neg_term, neg_w)?;
    let per = g.add(a, b)?;
    let total = g.sum_all(per)?;
    let norm = labels.len() as f64 * 2.0 * (k - 1) as f64;
    Ok(g.scale(total, T::lit(1.0 / norm))?)
}

/// Softmax cross-entropy on `scale * cos(theta_y + margin)` for the target
/// and `scale * cos(theta_k)` otherwise.
pub fn aam_softmax_loss<T: Real>(
    g: &mut Graph<T>,
    emb: Var,
    labels: &[usize],
    weights: Var,
    margin: f64,
    scale: f64,
) -> Result<Var> {
    let (cos, k) = cosines(g, emb, weights, labels)?;
    let c2 = g.square(cos)?;
    let one_minus = g.scale(c2, -T::one())?;
    let one_minus = g.add_scalar(one_minus, T::one())?;
    let s2 = g.clamp_min(one_minus, T::zero())?;
    let s2 = g.add_scalar(s2, T::lit(1e-9))?;
    let sin = g.sqrt(s2)?;
    let a = g.scale(cos, T::lit(margin.cos()))?;
    let b = g.scale(sin, T::lit(margin.sin()))?;
    let shifted = g.sub(a, b)?;
    let delta = g.sub(shifted, cos)?;
    let mask = g.input(one_hot(labels, k, 1.0)?)?;
    let delta = g.mul(delta, mask)?;
    let logits = g.add(cos, delta)?;
    let logits = g.scale(logits, T::lit(scale))?;
    let logp = g.log_softmax(logits, 1)?;
    let picked = g.mul(logp, mask)?;
    let total = g.sum_all(picked)?;
    Ok(g.scale(total, T::lit(-1.0 / labels.len() as f64))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_points() {
        let m = MarginSchedule::default();
        assert_eq!(m.margin_at(10.0, TrainStage::Pretrain).unwrap(), 0.0);
        assert!((m.margin_at(30.0, TrainStage::Pretrain).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(m.margin_at(40.0, TrainStage::Pretrain).unwrap(), 0.2);
        assert_eq!(m.margin_at(99.0, TrainStage::Pretrain).unwrap(), 0.2);
        assert_eq!(m.margin_at(3.0, TrainStage::LmFinetune).unwrap(), 0.3);
        assert!(m.margin_at(-1.0, TrainStage::Pretrain).is_err());
    }

    fn sf2c_value(emb: &[f64], weights: Tensor<f64>, label: usize, margin: f64, scale: f64) -> f64 {
        let mut g = Graph::<f64>::new();
        let e = g.input(Tensor::from_f64(vec![1, emb.len()], emb).unwrap()).unwrap();
        let w = g.input(weights).unwrap();
        let b = g.input(Tensor::zeros(vec![1])).unwrap();
        let l = sf2c_loss(&mut g, e, &[label], w, b, margin, scale).unwrap();
        g.value(l).item()
    }

    #[test]
    fn sf2c_reference_points() {
        let eye = Tensor::from_f64(vec![3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let matched = sf2c_value(&[1., 0., 0.], eye.clone(), 0, 0.0, 1.0);
        assert!(matched < std::f64::consts::LN_2);
        // Uniform logits: the embedding is orthogonal to every class at scale 1
        // with zero margin.
        let w = Tensor::from_f64(vec![2, 3], &[1., 0., 0., 0., 1., 0.]).unwrap();
        let uniform = sf2c_value(&[0., 0., 1.], w, 0, 0.0, 1.0);
        assert!((uniform - std::f64::consts::LN_2).abs() < 1e-12);
        let lo = sf2c_value(&[0.8, 0.6, 0.], eye.clone(), 0, 0.1, 4.0);
        let hi = sf2c_value(&[0.8, 0.6, 0.], eye.clone(), 0, 0.2, 4.0);
        assert!(hi > lo);
        let scaled = sf2c_value(&[8., 6., 0.], eye, 0, 0.1, 4.0);
        assert!((scaled - lo).abs() < 1e-12);
    }

    #[test]
    fn label_errors() {
        let mut g = Graph::<f64>::new();
        let e = g.input(Tensor::ones(vec![1, 2])).unwrap();
        let w = g.input(Tensor::ones(vec![2, 2])).unwrap();
        let b = g.input(Tensor::zeros(vec![1])).unwrap();
        assert!(sf2c_loss(&mut g, e, &[2], w, b, 0.0, 1.0).is_err());
        assert!(aam_softmax_loss(&mut g, e, &[0, 1], w, 0.0, 1.0).is_err());
    }
}
