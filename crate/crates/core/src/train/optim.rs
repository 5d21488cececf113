use indexmap::IndexMap;
use redim_tensor::{Real, Tensor};

use crate::error::{Error, Result};
use crate::model::ParamStore;

/// SGD with (Nesterov) momentum and L2 weight decay folded into the
/// gradient:
///
/// ```text
/// g <- g + wd * p
/// v <- m * v + g
/// p <- p - lr * (g + m * v)     (Nesterov)
/// p <- p - lr * v               (classic)
/// ```
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub momentum: T,
    pub nesterov: bool,
    pub weight_decay: T,
    velocity: IndexMap<String, Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(momentum: f64, nesterov: bool, weight_decay: f64) -> Self {
        Self {
            momentum: T::lit(momentum),
            nesterov,
            weight_decay: T::lit(weight_decay),
            velocity: IndexMap::new(),
        }
    }

    /// Updates one parameter in place.
    pub fn update(&mut self, name: &str, param: &mut Tensor<T>, grad: &Tensor<T>, lr: f64) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::Config(format!(
                "{name}: gradient shape {:?} != parameter shape {:?}",
                grad.shape(),
                param.shape()
            )));
        }
        let v = self
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| vec![T::zero(); grad.numel()]);
        let (m, wd, lr) = (self.momentum, self.weight_decay, T::lit(lr));
        for ((p, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(v.iter_mut()) {
            let g = g + wd * *p;
            *v = m * *v + g;
            let step = if self.nesterov { g + m * *v } else { *v };
            *p -= lr * step;
        }
        Ok(())
    }

    /// Applies `grads` (by parameter name) to every trainable entry of
    /// `store`; parameters without a gradient are left alone.
    pub fn step<'a>(
        &mut self,
        store: &mut ParamStore<T>,
        grads: impl IntoIterator<Item = (&'a str, Tensor<T>)>,
        lr: f64,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = store.get_mut(name)?;
            self.update(name, p, &g, lr)?;
        }
        Ok(())
    }
}
