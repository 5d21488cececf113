use indexmap::IndexMap;
use redim_tensor::{BatchNormOptions, BatchNormStats, Graph, Real, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    /// False for running statistics, which are updated by forward passes
    /// rather than by the optimizer.
    pub trainable: bool,
}

/// Named parameters in creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Param<T>>,
}

/// Buffers are recognized by name so a loaded checkpoint needs no flags.
pub fn is_buffer_name(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        let trainable = !is_buffer_name(&name);
        self.entries.insert(name, Param { value, trainable });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.iter().filter(|(_, p)| p.trainable).map(|(k, p)| (k, &p.value))
    }

    /// Count of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.trainable().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            trainable: p.trainable,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub fn ensure_same_layout<U: Real>(&self, other: &ParamStore<U>) -> Result<()> {
        for (name, p) in &self.entries {
            let q = other
                .entries
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if p.value.shape() != q.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: shape {:?}, expected {:?}",
                    q.value.shape(),
                    p.value.shape()
                )));
            }
        }
        if let Some(extra) = other.entries.keys().find(|k| !self.entries.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }
}

/// One forward pass: binds stored parameters to graph variables on first
/// use and applies batch-norm statistic updates in training mode.
pub struct Session<'a, T: Real> {
    pub g: &'a mut Graph<T>,
    store: &'a mut ParamStore<T>,
    bound: IndexMap<String, Var>,
    train: bool,
}

impl<'a, T: Real> Session<'a, T> {
    pub fn new(g: &'a mut Graph<T>, store: &'a mut ParamStore<T>, train: bool) -> Self {
        Self {
            g,
            store,
            bound: IndexMap::new(),
            train,
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Uses `var` for parameter `name` instead of creating a new leaf.
    pub fn bind(&mut self, name: &str, var: Var) {
        self.bound.insert(name.to_string(), var);
    }

    /// Graph variable of the trainable parameter `name`.
    pub fn p(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let v = self.g.param(self.store.get(name)?.clone())?;
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Batch norm with parameters and running statistics under `prefix`.
    pub fn bn(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.p(&format!("{prefix}.weight"))?;
        let beta = self.p(&format!("{prefix}.bias"))?;
        let (mean_key, var_key) = (format!("{prefix}.running_mean"), format!("{prefix}.running_var"));
        let mut stats = BatchNormStats {
            mean: self.store.get(&mean_key)?.data().to_vec(),
            var: self.store.get(&var_key)?.data().to_vec(),
        };
        let opts = if self.train {
            BatchNormOptions::train()
        } else {
            BatchNormOptions::eval()
        };
        let y = self.g.batch_norm(x, gamma, beta, &mut stats, opts)?;
        if self.train {
            self.store.get_mut(&mean_key)?.data_mut().copy_from_slice(&stats.mean);
            self.store.get_mut(&var_key)?.data_mut().copy_from_slice(&stats.var);
        }
        Ok(y)
    }

    /// Name-to-variable map of every parameter used so far.
    pub fn into_bound(self) -> IndexMap<String, Var> {
        self.bound
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffers_are_not_trainable() {
        let mut s = ParamStore::<f32>::new();
        s.insert("bn.weight", Tensor::ones(vec![2]));
        s.insert("bn.running_var", Tensor::ones(vec![2]));
        assert_eq!(s.num_trainable(), 2);
        assert_eq!(s.trainable().count(), 1);
        let mut other = s.cast::<f64>();
        s.ensure_same_layout(&other).unwrap();
        other.insert("extra", Tensor::ones(vec![1]));
        assert!(s.ensure_same_layout(&other).is_err());
    }

    #[test]
    fn session_updates_running_stats_only_in_training() {
        let mut store = ParamStore::<f64>::new();
        store.insert("bn.weight", Tensor::ones(vec![1]));
        store.insert("bn.bias", Tensor::zeros(vec![1]));
        store.insert("bn.running_mean", Tensor::zeros(vec![1]));
        store.insert("bn.running_var", Tensor::ones(vec![1]));
        let x = Tensor::from_f64(vec![2, 1, 2], &[1., 3., 5., 7.]).unwrap();
        for train in [false, true] {
            let mut g = Graph::new();
            let xv = g.input(x.clone()).unwrap();
            let mut s = Session::new(&mut g, &mut store, train);
            s.bn(xv, "bn").unwrap();
            assert_eq!(s.into_bound().len(), 2);
        }
        assert!((store.get("bn.running_mean").unwrap().item() - 0.4).abs() < 1e-12);
    }
}
